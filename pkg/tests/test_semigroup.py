import numpy as np
import pytest

from loopflow import loopspace as ls
from loopflow import model as mdl
from loopflow import semigroup as sg
from loopflow import spectral
from loopflow.errors import NegativeTimeOnPlus
from loopflow.loopspace import LoopField
from loopflow.semigroup import SemigroupQuery


def test_minus_part_growth_and_backward(dec):
    one = LoopField.constant(1.0)
    assert sg.apply(dec, SemigroupQuery(1.0, "minus"), one).coef(0).real == pytest.approx(np.e, rel=1e-12)
    assert sg.apply(dec, SemigroupQuery(-2.0, "minus"), one).coef(0).real == pytest.approx(np.exp(-2), rel=1e-12)


def test_time_zero_is_projection(dec, rng):
    z = LoopField.from_real(rng.standard_normal(dec.dim), 32)
    for part in ("plus", "minus"):
        got = sg.apply(dec, SemigroupQuery(0.0, part), z)
        assert ls.norm(got - spectral.project(dec, z, part), ls.Linf) < 1e-12
    assert ls.norm(sg.apply(dec, SemigroupQuery(0.0, "full"), z) - z, ls.Linf) < 1e-12


def test_negative_time_rejected_on_plus():
    with pytest.raises(NegativeTimeOnPlus):
        SemigroupQuery(-0.1, "plus")
    with pytest.raises(NegativeTimeOnPlus):
        SemigroupQuery(-0.1, "full")


def test_semigroup_law_and_splitting(dec, rng):
    z = LoopField.from_real(rng.standard_normal(dec.dim) / ls.w12_weights(32), 32)
    for s, t in [(0.01, 0.02), (0.3, 0.7), (1e-4, 2.0)]:
        a = sg.apply(dec, SemigroupQuery(s + t), z)
        b = sg.apply(dec, SemigroupQuery(s), sg.apply(dec, SemigroupQuery(t), z))
        assert ls.norm(a - b, ls.L2) < 1e-10
        full = sg.apply(dec, SemigroupQuery(s), z)
        split = sg.apply(dec, SemigroupQuery(s, "plus"), z) + sg.apply(dec, SemigroupQuery(s, "minus"), z)
        assert ls.norm(full - split, ls.L2) < 1e-14
        for part in ("plus", "minus"):
            lhs = sg.apply(dec, SemigroupQuery(s), spectral.project(dec, z, part))
            rhs = spectral.project(dec, sg.apply(dec, SemigroupQuery(s), z), part)
            assert ls.norm(lhs - rhs, ls.L2) < 1e-12


def test_operator_norms(dec):
    s = 0.5
    assert sg.operator_norm(dec, s, "plus") == pytest.approx(np.exp(-s * dec.eigenvalues[1]), rel=1e-10)
    assert sg.operator_norm(dec, 1.0, "minus") == pytest.approx(np.e, rel=1e-12)
    M = sg.semigroup_matrix(dec, 0.3, "plus") @ dec.projector("minus")
    assert np.max(np.abs(M)) < 1e-14


def test_l1_operator_norm_is_extreme_point_max(dec, rng):
    s = 0.01
    op = sg.operator_norm(dec, s, "plus", ls.L1, ls.W12)
    M = np.sqrt(ls.w12_weights(32))[:, None] * sg.semigroup_matrix(dec, s, "plus")
    for _ in range(20):
        g = rng.standard_normal(65)
        c = ls.grid_to_coords(g[:, None], 32, 1)
        l1 = np.mean(np.abs(g))
        assert np.linalg.norm(M @ c) <= op * l1 * (1 + 1e-12)


def test_audit_shifted_free_operator():
    free = mdl.free_model()
    x = mdl.find_critical_loop(free, LoopField.constant(0.0, 32))
    op = spectral.assemble(free, x)
    shifted = spectral.JacobiOperator(x=x, matrix=op.matrix + np.eye(op.matrix.shape[0]), model=free)
    dec = spectral.decompose(shifted)
    rep = sg.audit_smoothing(dec, np.geomspace(1e-3, 10, 60), 0.75)
    assert np.isfinite(rep["c_hat"])
    assert rep["refinement_stable"]


def test_audit_minus_decay_finite(dec):
    rep = sg.audit_smoothing(dec, -np.linspace(0, 10, 50), 0.0, part="minus", src=ls.W12)
    assert rep["c_hat"] <= 1.0 + 1e-12


def test_audit_l2_plus_bounded_by_one(dec):
    rep = sg.audit_smoothing(dec, np.geomspace(1e-3, 10, 60), 0.0, src=ls.L2, dst=ls.L2)
    assert rep["c_hat"] <= 1.0 + 1e-12


def test_semigroup_constant_at_least_one(dec):
    c = sg.semigroup_constant(dec, points=30)
    assert c["c"] >= 1.0
    assert set(c["per_pair"]) >= {"L1->W12", "L2->W12", "L2->L2", "W12->W12"}
