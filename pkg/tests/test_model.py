import numpy as np
import pytest

from loopflow import loopspace as ls
from loopflow import model as mdl
from loopflow.errors import NoConvergence
from loopflow.loopspace import LoopField


def test_grad_and_hess_at_pi(pendulum):
    q = np.array([[np.pi]])
    assert mdl.grad_potential(pendulum, np.zeros(1), q)[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert mdl.hess_potential(pendulum, np.zeros(1), q)[0, 0, 0] == pytest.approx(1.0, abs=1e-15)


def test_zero_potential_gradient(rng):
    free = mdl.free_model(2)
    q = rng.standard_normal((5, 2))
    assert np.all(mdl.grad_potential(free, np.linspace(0, 1, 5), q) == 0)


def test_constant_loop_actions(pendulum):
    assert mdl.action(pendulum, LoopField.constant(np.pi, 8)) == pytest.approx(1.0, abs=1e-15)
    assert mdl.action(pendulum, LoopField.constant(0.0, 8)) == pytest.approx(-1.0, abs=1e-15)
    assert mdl.action(mdl.free_model(), LoopField.constant(np.pi, 8)) == 0.0


def test_newton_to_pi(crit):
    assert crit.x.coef(0).real == pytest.approx(np.pi, abs=1e-12)
    assert crit.c == pytest.approx(1.0, abs=1e-12)
    assert crit.residual < 1e-10


def test_newton_to_zero(pendulum):
    x = mdl.find_critical_loop(pendulum, LoopField.constant(0.2))
    assert x.x.coef(0).real == pytest.approx(0.0, abs=1e-12)
    assert x.c == pytest.approx(-1.0, abs=1e-12)


def test_free_model_returns_guess():
    g = LoopField.constant(1.3)
    x = mdl.find_critical_loop(mdl.free_model(), g)
    assert np.array_equal(x.x.coeffs, g.coeffs)
    assert x.residual == 0.0


def test_newton_budget_exhausted(pendulum):
    with pytest.raises(NoConvergence):
        mdl.find_critical_loop(pendulum, LoopField.constant(2.0), max_iter=1)


def test_nonlinearity_scalar_values(pendulum, crit):
    for z in (0.1, -0.1):
        f = mdl.nonlinearity(pendulum, crit, LoopField.constant(z))
        assert f.coef(0).real == pytest.approx(np.sin(z) - z, rel=1e-12)
        assert ls.norm(f - LoopField.constant(np.sin(z) - z), ls.Linf) < 1e-15
    assert np.sin(0.1) - 0.1 == pytest.approx(-1.665834e-4, rel=1e-6)


def test_nonlinearity_vanishes_at_zero(pendulum, crit):
    z = LoopField.zeros()
    v = LoopField.harmonic(3, 0.7)
    assert ls.norm(mdl.nonlinearity(pendulum, crit, z), ls.Linf) == 0
    assert ls.norm(mdl.dnonlinearity(pendulum, crit, z, v), ls.Linf) == 0


def test_dnonlinearity_scalar(pendulum, crit):
    d = mdl.dnonlinearity(pendulum, crit, LoopField.constant(0.2), LoopField.constant(1.0))
    # f(z) = sin z - z at x = pi, so df(z)v = (cos z - 1) v
    assert d.coef(0).real == pytest.approx(np.cos(0.2) - 1, rel=1e-12)
    assert abs(d.coef(0).real) == pytest.approx(0.019933, abs=1e-6)


def test_dnonlinearity_matches_finite_difference(pendulum, crit):
    z = LoopField.harmonic(1, 0.1) + LoopField.constant(0.05)
    v = LoopField.harmonic(2, 1.0, "sin")
    h = 1e-6
    fd = (mdl.nonlinearity(pendulum, crit, z + v * h) - mdl.nonlinearity(pendulum, crit, z - v * h)) * (0.5 / h)
    d = mdl.dnonlinearity(pendulum, crit, z, v)
    assert ls.norm(fd - d, ls.L2) < 1e-8


def test_action_gradient_consistency():
    model = mdl.TorusModel(dim=1, terms=(mdl.PotentialTerm(1.0, (1.0,), m=1, phase=0.3),), name="forced")
    u = LoopField.constant(0.4) + LoopField.harmonic(1, 0.3) + LoopField.harmonic(2, 0.1, "sin")
    v = LoopField.harmonic(1, 0.5, "sin") + LoopField.constant(0.2)
    h = 1e-5
    fd = (mdl.action(model, u + v * h) - mdl.action(model, u - v * h)) / (2 * h)
    # L2 pairing of -u'' - grad V(u) with v
    res = mdl.critical_residual(model, u)
    pair = float(np.dot(res, v.real_coords()))
    assert fd == pytest.approx(pair, rel=1e-6)


def test_kappa_free_model_is_zero():
    free = mdl.free_model()
    x = mdl.find_critical_loop(free, LoopField.constant(0.5))
    for rho in (0.01, 0.1, 1.0):
        assert mdl.estimate_kappa(free, x, rho, samples=50)["kappa"] == 0.0


def test_kappa_monotone_and_vanishing(pendulum, crit):
    radii = [0.4, 0.2, 0.1, 0.05, 0.025]
    prof = mdl.kappa_profile(pendulum, crit, radii, samples=200)
    assert all(a >= b for a, b in zip(prof, prof[1:]))
    assert prof[-1] < 1e-3


def test_kappa_below_analytic_bound(pendulum, crit):
    rho = 0.2
    cinf = mdl.sobolev_sup_ratio(32)
    k = mdl.estimate_kappa(pendulum, crit, rho, samples=300)
    assert k["lower_estimate"] is True
    assert 0 < k["kappa"] <= 1 - np.cos(cinf * rho)
