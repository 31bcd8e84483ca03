"""Acceptance criteria on the pendulum model at J=32; one PASS/FAIL line per criterion."""
import filecmp
import math

import numpy as np
import pytest

from conftest import ACCEPTANCE
from loopflow import cli
from loopflow import graphmaps as gm
from loopflow import lambdaverify as lv
from loopflow import loopspace as ls
from loopflow import model as mdl
from loopflow import semigroup, spectral
from loopflow import semiflow as sf
from loopflow.loopspace import LoopField
from loopflow.semiflow import TimeGrid


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


def forward_closed(z0, s):
    # constant loops pi + z solve z' = sin z
    return 2 * np.arctan(np.tan(z0 / 2) * np.exp(s))


def backward_closed(z0, T):
    return 2 * np.arctan(np.tan(z0 / 2) * np.exp(-T))


@pytest.fixture(scope="module")
def conv(setup, spec):
    return lv.sweep_convergence(setup, spec)


@pytest.fixture(scope="module")
def c1(setup, spec):
    return lv.sweep_c1(setup, spec)


def mixed(setup, T, gi, zp):
    return gm.solve_mixed(setup.dec, setup.model, setup.x, setup.ledger, T, setup.gamma(gi), zp,
                          setup.settings, gamma_id=gi, warn_below_T0=False)


def test_criterion_01_spectrum(dec):
    j = np.sort(ls.real_wavenumbers(32))
    err = float(np.max(np.abs(dec.eigenvalues - ((2 * np.pi * j) ** 2 - 1))))
    m = mdl.torus_product()
    x2 = mdl.find_critical_loop(m, LoopField.constant([3.0, 3.1], 32))
    k2 = spectral.decompose(spectral.assemble(m, x2)).morse_index
    ok = err < 1e-8 and dec.morse_index == 1 and abs(dec.gap - 1) < 1e-8 and k2 == 2
    record(1, ok, f"max eigenvalue error {err:.2e}, k={dec.morse_index}, d={dec.gap:.10f}, T^2 index {k2}")


def test_criterion_02_integrator(dec, pendulum, crit):
    z = LoopField.harmonic(1, 0.05)
    tr = sf.evolve(dec, pendulum, crit, z, 0.5)
    orc = sf.evolve_oracle(pendulum, crit, z, 0.5, t_eval=tr.grid[[0, -1]])
    gap = ls.norm(tr.final - orc.final, ls.W12)
    c = sf.evolve(dec, pendulum, crit, LoopField.constant(0.1), 1.0)
    vals = c.coords[:, 0]
    cerr = float(np.max(np.abs(vals - forward_closed(0.1, c.grid))))
    rest = float(np.max(np.abs(c.coords[:, 1:])))
    record(2, gap < 1e-6 and cerr < 1e-6 and rest < 1e-6,
           f"Duhamel vs oracle W12 gap {gap:.2e}; constant-mode closed form error {cerr:.2e}")


def test_criterion_03_representation(dec, pendulum, crit):
    z = LoopField.harmonic(1, 0.05) + LoopField.constant(0.05) + LoopField.harmonic(2, 0.02, "sin")
    res = []
    for dt in (0.04, 0.02, 0.01):
        g = TimeGrid(dt=dt).nodes(1.0)
        orc = sf.evolve_oracle(pendulum, crit, z, 1.0, t_eval=g, rtol=1e-12, atol=1e-14)
        res.append(sf.residual_representation(dec, pendulum, crit, orc))
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    ok = res[1] < 1e-6 and np.all(orders >= 1.0)
    record(3, ok, "residuals " + ", ".join(f"{r:.2e}" for r in res) + f" (dt 0.04/0.02/0.01), orders "
           + ", ".join(f"{o:.2f}" for o in orders))


def test_criterion_04_action(setup, dec, pendulum, crit, conv):
    L = setup.ledger
    trajs = []
    for z in (LoopField.harmonic(1, 0.05), LoopField.constant(0.08),
              LoopField.harmonic(1, 0.03) + LoopField.constant(0.03) + LoopField.harmonic(3, 0.01, "sin")):
        trajs.append(sf.evolve(dec, pendulum, crit, z, 2.0))
    trajs.append(sf.evolve_oracle(pendulum, crit, LoopField.harmonic(2, 0.04), 0.5))
    trajs.append(gm.solve_unstable(dec, pendulum, crit, L, LoopField.constant(0.08)))
    zps = lv.zplus_samples(setup, lv.SweepSpec(T_list=(L.T0,)))
    for zp in zps:
        trajs.append(mixed(setup, L.T0, 0, zp).trajectory)
    worst = max(float(np.max(np.diff(sf.action_along(pendulum, t, crit)))) for t in trajs)
    record(4, worst <= 1e-10, f"{len(trajs)} trajectories, worst per-step action increase {worst:.2e}")


def test_criterion_05_contraction(setup, conv):
    probe = gm.probe_contraction(setup.dec, setup.model, setup.x, setup.ledger, setup.gamma(0),
                                 setup.settings)
    worst = max(max(probe), conv.checks["max_ratio"])
    ok = setup.ledger_report["valid"] and worst <= 0.6
    record(5, ok, f"ledger valid={setup.ledger_report['valid']} ({setup.ledger.mode}), "
                  f"max iteration ratio {worst:.2e}")


def test_criterion_06_graph_identities(setup, spec, conv):
    exact = max(r["zplus_exact"] for r in conv.rows)
    err = 0.0
    for gi in range(spec.gamma_count):
        g0 = setup.gamma(gi).coef(0).real
        for T in spec.T_list:
            G = mixed(setup, T, gi, LoopField.zeros()).xi0
            err = max(err, ls.norm(G - LoopField.constant(backward_closed(g0, T)), ls.W12))
    record(6, exact < 1e-14 and err < 1e-6,
           f"max ||pi_+ Gamma - z_+|| {exact:.1e}; Gamma(0) vs closed-form backward flow {err:.2e}")


def test_criterion_07_roundtrip(setup, spec):
    rep = lv.roundtrip_audit(setup, spec)
    rows = [r for r in rep["rows"] if "minus_residual" in r]
    mr = max(r["minus_residual"] for r in rows)
    fd = max(r["fiber_distance"] for r in rows if r["T"] >= setup.ledger.T1)
    og = max(r["oracle_gap"] for r in rows if "oracle_gap" in r)
    ok = all(rep["checks"].values())
    record(7, ok, f"{len(rows)} rows: max minus residual {mr:.2e}, max fiber distance {fd:.2e} <= r={setup.ledger.r}, "
                  f"oracle gap {og:.1e}")


def test_criterion_08_decay_rate(setup, spec, conv):
    mu = setup.ledger.mu
    ok = conv.fitted_rate >= mu / 4 - 0.05 * mu and conv.checks["all_rows_ok"] and conv.checks["monotone_in_T"]
    record(8, ok, f"pooled rate {conv.fitted_rate:.4f} vs mu/4 - 0.05 mu = {mu / 4 - 0.05 * mu:.4f} "
                  f"over T in [{spec.T_list[0]:.3f}, {spec.T_list[-1]:.3f}]")


def test_criterion_09_c1_bounds(setup, c1):
    mu = setup.ledger.mu
    rows = [r for r in c1.rows if "c1_dist_L2" in r]
    X = max(r["X_ratio_L2"] for r in rows)
    Y = max(r["Y_minus_v_L2"] for r in rows)
    ok = (X <= 2 and Y <= 0.25 and c1.fitted_rate >= mu / 4 - 0.05 * mu and c1.checks["all_rows_ok"])
    record(9, ok, f"{len(rows)} rows: max ||dG^T v||/||v|| {X:.4f}, max ||dG^inf v - v||/||v|| {Y:.2e}, "
                  f"pooled rate {c1.fitted_rate:.4f}")


def test_criterion_10_bilipschitz(setup, spec):
    ratios, ok = [], True
    for T in (spec.T_list[0], spec.T_list[-1]):
        for gi in range(spec.gamma_count):
            rep = lv.bilipschitz_audit(setup, spec, T=T, gamma_id=gi)
            ok &= rep["pass"]
            ratios += [r["ratio"] for r in rep["rows"]]
    record(10, ok, f"{len(ratios)} pairs, ratios in [{min(ratios):.6f}, {max(ratios):.6f}] "
                   f"within [0.5, {2 * setup.c_hat:.4f}]")


def test_criterion_11_linearization_fd(setup, spec):
    rep = lv.linearization_fd_audit(setup, spec)
    worst = max(r["rel_err"] for r in rep["rows"])
    record(11, rep["pass"], f"{len(rep['rows'])} (z_+, v) pairs at T={rep['T']:.3f}, h=1e-4: max rel error {worst:.2e}")


def test_criterion_12_smoothing(pendulum):
    s = np.geomspace(1e-3, 10.0, 120)
    c = {}
    for J in (32, 64):
        x = mdl.find_critical_loop(pendulum, LoopField.constant(3.0, J))
        d = spectral.decompose(spectral.assemble(pendulum, x))
        rep = semigroup.audit_smoothing(d, s, 0.75)
        c[J] = rep["c_hat"]
        assert math.isfinite(rep["c_hat"])
    rel = abs(c[64] - c[32]) / c[32]
    record(12, rel <= 0.1, f"c_hat J=32 {c[32]:.5f}, J=64 {c[64]:.5f}, relative change {rel:.2e}")


def test_criterion_13_determinism(tmp_path, capsys):
    out = []
    for i, jobs in enumerate((1, 2)):
        assert cli.main(["lambda-sweep", "--outdir", str(tmp_path / f"run{i}"), "--jobs", str(jobs)]) == 0
        out.append(capsys.readouterr().out.split())
    names = [p.rsplit("/", 1)[1] for p in out[0]]
    same = all(filecmp.cmp(a, b, shallow=False) for a, b in zip(*out))
    record(13, same and len(out[0]) == 3, f"two lambda-sweep runs (jobs 1 and 2): {', '.join(names)} byte-identical")
