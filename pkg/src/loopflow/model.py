"""Flat-torus targets with trigonometric time-periodic potentials.

The potential is a finite sum of terms ``amp * cos(k.q + 2 pi m t + phase)``
(``kind="sin"`` for sine), so gradient and Hessian are exact.  On a flat
target every curvature and exponential-map correction in the nonlinearity
vanishes; ``TorusModel.curvature_terms`` is the hook where they would be added
for a curved metric (called as ``curvature_terms(x_grid, zeta_grid, t)``).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import loopspace as ls
from .errors import NoConvergence, SingularJacobian
from .loopspace import GridField, LoopField

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PotentialTerm:
    amp: float
    k: tuple
    m: int = 0
    phase: float = 0.0
    kind: str = "cos"

    def __post_init__(self):
        if self.kind not in ("cos", "sin"):
            raise ValueError(f"potential term kind must be cos or sin, got {self.kind!r}")
        object.__setattr__(self, "k", tuple(float(v) for v in self.k))


@dataclass(frozen=True)
class TorusModel:
    dim: int
    terms: tuple = ()
    name: str = "custom"
    curvature_terms: Callable | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        terms = tuple(t if isinstance(t, PotentialTerm) else PotentialTerm(**t) for t in self.terms)
        for t in terms:
            if len(t.k) != self.dim:
                raise ValueError(f"wavevector {t.k} does not match dim {self.dim}")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def from_spec(cls, spec: dict) -> "TorusModel":
        return cls(dim=int(spec["dim"]), terms=tuple(PotentialTerm(**t) for t in spec.get("terms", [])),
                   name=spec.get("name", "custom"))

    def to_spec(self) -> dict:
        return {"name": self.name, "dim": self.dim,
                "terms": [{"amp": t.amp, "k": list(t.k), "m": t.m, "phase": t.phase, "kind": t.kind}
                          for t in self.terms]}

    def _phases(self, t, q):
        t = np.asarray(t, dtype=float)
        q = np.asarray(q, dtype=float)
        for term in self.terms:
            theta = q @ np.asarray(term.k) + 2 * np.pi * term.m * t + term.phase
            yield term, np.asarray(term.k), theta

    def potential(self, t, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape[:-1])
        for term, _, theta in self._phases(t, q):
            out = out + term.amp * (np.cos(theta) if term.kind == "cos" else np.sin(theta))
        return out


def pendulum(a: float = 1.0) -> TorusModel:
    """V(t, q) = a cos q on the circle."""
    return TorusModel(dim=1, terms=(PotentialTerm(a, (1.0,)),), name="pendulum")


def torus_product(a: float = 1.0, b: float = 0.8) -> TorusModel:
    """V(t, q) = a cos q1 + b cos q2 on T^2; the constant loop (pi, pi) has index 2."""
    return TorusModel(dim=2, terms=(PotentialTerm(a, (1.0, 0.0)), PotentialTerm(b, (0.0, 1.0))),
                      name="torus_product")


def free_model(dim: int = 1) -> TorusModel:
    return TorusModel(dim=dim, terms=(), name="free")


def grad_potential(model: TorusModel, t, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape)
    for term, k, theta in model._phases(t, q):
        if term.kind == "cos":
            out = out - term.amp * np.sin(theta)[..., None] * k
        else:
            out = out + term.amp * np.cos(theta)[..., None] * k
    return out


def hess_potential(model: TorusModel, t, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape + (model.dim,))
    for term, k, theta in model._phases(t, q):
        s = np.cos(theta) if term.kind == "cos" else np.sin(theta)
        out = out - term.amp * s[..., None, None] * np.outer(k, k)
    return out


def action(model: TorusModel, u: LoopField) -> float:
    """Kinetic part spectrally, potential part by the rectangle rule."""
    j = np.arange(-u.J, u.J + 1)
    kinetic = 0.5 * np.sum(((2 * np.pi * j) ** 2)[:, None] * np.abs(u.coeffs) ** 2)
    vals = ls.inverse(u).values
    pot = model.potential(ls.nodes(u.J), vals)
    return float(kinetic - np.mean(pot))


@dataclass(frozen=True)
class CriticalLoop:
    x: LoopField
    c: float
    residual: float
    iterations: int = 0


def _stiffness_diag(J: int, n: int) -> np.ndarray:
    return ls.w12_weights(J, n) - 1.0


def _hess_block(model: TorusModel, xgrid: np.ndarray, J: int) -> np.ndarray:
    """Galerkin matrix of pointwise multiplication by HessV_t(x(t)) in real coordinates."""
    N = ls.n_nodes(J)
    n = model.dim
    H = hess_potential(model, ls.nodes(J), xgrid)        # (N, n, n)
    B = ls.synthesis_matrix(J)
    M = np.zeros((n * N, n * N))
    for a in range(n):
        for b in range(n):
            M[a * N:(a + 1) * N, b * N:(b + 1) * N] = (B.T * H[:, a, b]) @ B / N
    return 0.5 * (M + M.T)


def critical_residual(model: TorusModel, x: LoopField) -> np.ndarray:
    """Real coordinates of -x'' - grad V_t(x)."""
    J, n = x.J, x.n
    c = x.real_coords()
    g = ls.coords_to_grid(c, J, n)
    gradV = grad_potential(model, ls.nodes(J), g)
    return _stiffness_diag(J, n) * c - ls.grid_to_coords(gradV, J, n)


def find_critical_loop(model: TorusModel, guess: LoopField, newton_tol: float = 1e-10,
                       max_iter: int = 50, cond_max: float = 1e12) -> CriticalLoop:
    if guess.n != model.dim:
        raise ValueError(f"guess has {guess.n} components, model dim is {model.dim}")
    J, n = guess.J, guess.n
    c = guess.real_coords()
    for it in range(max_iter + 1):
        x = LoopField.from_real(c, J, n)
        F = critical_residual(model, x)
        res = float(np.linalg.norm(F))
        if res < newton_tol:
            return CriticalLoop(x=x, c=action(model, x), residual=res, iterations=it)
        if it == max_iter:
            break
        Jac = np.diag(_stiffness_diag(J, n)) - _hess_block(model, ls.coords_to_grid(c, J, n), J)
        if np.linalg.cond(Jac) > cond_max:
            raise SingularJacobian(f"Newton Jacobian numerically singular at iteration {it}")
        c = c - np.linalg.solve(Jac, F)
    raise NoConvergence(f"Newton residual {res:.3e} after {max_iter} iterations")


def _grid_nonlinearity(model: TorusModel, xgrid: np.ndarray, zgrid: np.ndarray, t: np.ndarray,
                       hess_x: np.ndarray | None = None) -> np.ndarray:
    """f on grid values; zgrid has shape (..., N, n)."""
    if hess_x is None:
        hess_x = hess_potential(model, t, xgrid)
    out = (grad_potential(model, t, xgrid + zgrid) - grad_potential(model, t, xgrid)
           - np.einsum("iab,...ib->...ia", hess_x, zgrid))
    if model.curvature_terms is not None:
        out = out + model.curvature_terms(xgrid, zgrid, t)
    return out


def _grid_dnonlinearity(model: TorusModel, xgrid, zgrid, vgrid, t, hess_x=None):
    if hess_x is None:
        hess_x = hess_potential(model, t, xgrid)
    dH = hess_potential(model, t, xgrid + zgrid) - hess_x
    return np.einsum("...iab,...ib->...ia", dH, vgrid)


def nonlinearity(model: TorusModel, x: CriticalLoop, zeta: LoopField, rho0: float | None = None) -> LoopField:
    if rho0 is not None and ls.norm(zeta, ls.W12) > rho0:
        warnings.warn("nonlinearity evaluated outside the chart ball B_rho0", stacklevel=2)
    t = ls.nodes(zeta.J)
    val = _grid_nonlinearity(model, ls.inverse(x.x).values, ls.inverse(zeta).values, t)
    return ls.transform(GridField(val))


def dnonlinearity(model: TorusModel, x: CriticalLoop, zeta: LoopField, v: LoopField,
                  rho0: float | None = None) -> LoopField:
    if rho0 is not None and ls.norm(zeta, ls.W12) > rho0:
        warnings.warn("dnonlinearity evaluated outside the chart ball B_rho0", stacklevel=2)
    t = ls.nodes(zeta.J)
    val = _grid_dnonlinearity(model, ls.inverse(x.x).values, ls.inverse(zeta).values,
                              ls.inverse(v).values, t)
    return ls.transform(GridField(val))


def _sample_ball(rng: np.random.Generator, J: int, n: int, rho: float, count: int) -> np.ndarray:
    """Real coordinates of ``count`` fields in the W12 ball of radius rho.

    Mixes spatially constant fields (largest sup/W12 ratio) with smooth random
    fields whose coefficients decay like the inverse W12 weight.
    """
    w = ls.w12_weights(J, n)
    raw = rng.standard_normal((count, w.size)) / w
    const_mask = rng.random(count) < 0.4
    N = ls.n_nodes(J)
    keep = np.zeros(w.size, dtype=bool)
    keep[::N] = True
    raw[const_mask] *= keep
    norms = ls.w12_norm_coords(raw, J, n)
    radii = rho * rng.random(count) ** (1.0 / 3.0)
    return raw * (radii / norms)[:, None]


def sobolev_sup_ratio(J: int, n: int = 1, samples: int = 2000, seed: int = 0) -> float:
    """Empirical max of ||z||_inf / ||z||_W12 over sampled fields."""
    rng = np.random.default_rng(seed)
    c = _sample_ball(rng, J, n, 1.0, samples)
    # the W12 Riesz representer of evaluation at t=0 is the extremal field
    rep = np.zeros(n * ls.n_nodes(J))
    rep[: ls.n_nodes(J)] = ls.synthesis_matrix(J)[0] / ls.w12_weights(J, 1)
    c = np.vstack([c, rep])
    sup = np.linalg.norm(ls.coords_to_grid(c, J, n), axis=-1).max(axis=-1)
    return float(np.max(sup / ls.w12_norm_coords(c, J, n)))


def estimate_kappa(model: TorusModel, x: CriticalLoop, rho: float, samples: int = 400,
                   seed: int = 0) -> dict:
    """Monte-Carlo lower estimates of the Lipschitz function kappa(rho) and of kappa_*.

    kappa: max ||f(xi)-f(eta)||_L1 / ||xi-eta||_W12; kappa_*: max
    ||df(xi)v-df(eta)v||_L1 / (||xi-eta||_W12 ||v||_W12), pairs in the rho-ball.
    """
    J, n = x.x.J, x.x.n
    t = ls.nodes(J)
    if rho <= 0:
        return {"kappa": 0.0, "kappa_star": 0.0, "rho": rho, "samples": samples, "lower_estimate": True}
    rng = np.random.default_rng(seed)
    xg = ls.inverse(x.x).values
    hx = hess_potential(model, t, xg)
    xi = _sample_ball(rng, J, n, rho, samples)
    eta = _sample_ball(rng, J, n, rho, samples)
    # pairs that are close along a ray probe the local derivative bound
    near = rng.random(samples) < 0.5
    eta[near] = xi[near] * (1.0 - 1e-3 * rng.random(near.sum()))[:, None]
    v = _sample_ball(rng, J, n, 1.0, samples)
    gx, ge, gv = (ls.coords_to_grid(a, J, n) for a in (xi, eta, v))
    dist = ls.w12_norm_coords(xi - eta, J, n)
    ok = dist > 1e-14 * max(rho, 1e-300)
    fdiff = _grid_nonlinearity(model, xg, gx, t, hx) - _grid_nonlinearity(model, xg, ge, t, hx)
    l1 = np.mean(np.linalg.norm(fdiff, axis=-1), axis=-1)
    dfd = _grid_dnonlinearity(model, xg, gx, gv, t, hx) - _grid_dnonlinearity(model, xg, ge, gv, t, hx)
    l1d = np.mean(np.linalg.norm(dfd, axis=-1), axis=-1)
    vn = ls.w12_norm_coords(v, J, n)
    kappa = float(np.max(l1[ok] / dist[ok], initial=0.0))
    kappa_star = float(np.max(l1d[ok] / (dist[ok] * vn[ok]), initial=0.0))
    return {"kappa": kappa, "kappa_star": kappa_star, "rho": rho, "samples": samples,
            "lower_estimate": True}


def kappa_profile(model: TorusModel, x: CriticalLoop, radii: Sequence[float], samples: int = 400,
                  seed: int = 0) -> list[float]:
    """kappa estimates over a sequence of radii (same seed, so samples are rescaled copies)."""
    return [estimate_kappa(model, x, r, samples, seed)["kappa"] for r in radii]
