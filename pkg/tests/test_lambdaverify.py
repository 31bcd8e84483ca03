import math

import numpy as np
import pytest

from loopflow import lambdaverify as lv
from loopflow import loopspace as ls
from loopflow.lambdaverify import SweepSpec


def test_fit_rate_exact_exponential():
    T = np.linspace(3.0, 7.0, 9)
    assert lv.fit_rate(T, 2.5 * np.exp(-0.3 * T)) == pytest.approx(0.3, rel=1e-12)


def test_fit_rate_ignores_floor_and_needs_two_points():
    T = np.array([1.0, 2.0, 3.0])
    assert lv.fit_rate(T, [1e-2, 1e-3, 0.0]) == pytest.approx(math.log(10))
    assert math.isnan(lv.fit_rate(T, [1e-2, 0.0, np.nan]))


def test_pooled_rate_shares_slope():
    T = np.linspace(0, 4, 5)
    groups = {"a": (T, 3.0 * np.exp(-0.5 * T)), "b": (T, 1e-4 * np.exp(-0.5 * T)), "c": (T[:1], [1.0])}
    assert lv.pooled_rate(groups) == pytest.approx(0.5, rel=1e-12)
    assert math.isnan(lv.pooled_rate({}))


def test_pooled_rate_weights_groups():
    T = np.linspace(0, 2, 3)
    groups = {"a": (T, np.exp(-T)), "b": (T, np.exp(-3 * T))}
    assert lv.pooled_rate(groups) == pytest.approx(2.0)


@pytest.mark.parametrize("kw", [dict(T_list=()), dict(T_list=(2.0, 1.0)), dict(T_list=(1.0, 1.0)),
                                dict(T_list=(1.0,), zplus_fraction=1.5), dict(T_list=(1.0,), v_count=0)])
def test_sweepspec_validation(kw):
    with pytest.raises(ValueError):
        SweepSpec(**kw)


def test_sweepspec_default():
    sp = SweepSpec.default(2.0)
    assert sp.T_list[0] == 2.0 and sp.T_list[-1] == pytest.approx(6.0)
    assert len(sp.T_list) == 9


def test_setup_ledger(setup):
    L = setup.ledger
    assert L.c == pytest.approx(1.0, abs=1e-10)
    assert L.mu == pytest.approx(0.5)
    assert L.kappa_star == 1.0
    assert L.T0 == pytest.approx(4 * math.log(2))
    assert len(setup.gammas) == 2
    assert setup.ledger_report["valid"]
    for g in setup.gammas:
        assert abs(g.coef(0).real) == pytest.approx(math.acos(1 - L.eps), abs=1e-8)


def test_samples(setup, spec):
    zps = lv.zplus_samples(setup, spec)
    assert len(zps) == spec.zplus_count
    assert ls.norm(zps[0], ls.W12) == 0
    radius = spec.zplus_fraction * setup.ledger.zplus_radius
    for z in zps[1:]:
        assert ls.norm(z, ls.W12) == pytest.approx(radius)
        assert abs(z.coef(0)) < 1e-14
    vs = lv.v_samples(setup, spec)
    assert [ls.norm(v, ls.L2) for v in vs] == pytest.approx([1.0] * spec.v_count)
    assert np.array_equal(lv.zplus_samples(setup, spec)[1].coeffs, zps[1].coeffs)


def test_small_convergence_sweep(setup):
    T0 = setup.ledger.T0
    sp = SweepSpec(T_list=(T0, T0 + 1.0, T0 + 2.0), gamma_count=1, zplus_count=2)
    res = lv.sweep_convergence(setup, sp)
    assert len(res.rows) == 6
    assert res.checks["all_rows_ok"] and res.checks["monotone_in_T"]
    assert res.checks["zero_rows_identity"]
    assert res.fitted_rate >= res.bound_rate
    s = res.summary()
    assert s["rows"] == 6 and s["failed_rows"] == 0


def test_rows_csv_and_decay_file(tmp_path):
    rows = [{"T": 1.0, "gamma_id": 0, "zplus_id": 0, "dist_W12": 0.5},
            {"T": 2.0, "gamma_id": 0, "zplus_id": 0, "dist_W12": 0.25, "extra": "x"}]
    res = lv.SweepResult("convergence", rows, 0.69, 0.125, {})
    lv.write_rows_csv(rows, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "T,gamma_id,zplus_id,dist_W12,extra"
    assert lines[1] == "1.0,0,0,0.5,"
    lv.write_decay_file(res, tmp_path / "d.dat")
    assert (tmp_path / "d.dat").read_text() == "# gamma_id=0/zplus_id=0\n1.0 0.5\n2.0 0.25\n\n"


def test_lipschitz_constant(setup):
    assert lv.lipschitz_constant(setup) == pytest.approx(0.2 * 2 * (1 + 1), rel=1e-9)
