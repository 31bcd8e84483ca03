"""Stable/unstable manifolds, descending spheres and the time-T graph maps.

Every construction is a fixed point of one integral operator on a time grid
[a, b]:

    W(s) = hom(s) + int_a^s e^{-(s-sigma)A} pi_+ f(W) - int_s^b e^{-(s-sigma)A^-} pi_- f(W)

with the homogeneous part carrying the data (z_+ at the left end, the
unstable component at the right end).  For the stable manifold b is a
truncation of infinity, for the unstable manifold a is.  The iteration is
measured in the exponentially weighted sup norm, e^{+-s mu/2} ||.||_{W12}.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import duhamel
from . import loopspace as ls
from .duhamel import LocalFlow
from .errors import BallViolation, BisectionFail, ContractionStall, FiberMiss
from .loopspace import LoopField
from .model import CriticalLoop, TorusModel, action
from .semiflow import TimeGrid, Trajectory

log = logging.getLogger(__name__)

# 9/mu^(1/4) + 4/(3 mu) + 4 and its c-weighted variant
def _bracket(mu: float, c: float = 1.0) -> float:
    return 9.0 / mu ** 0.25 + 4.0 * c / (3.0 * mu) + 4.0 * c


@dataclass(frozen=True)
class SolverSettings:
    fp_tol: float = 1e-10
    fiber_tol: float = 1e-6
    action_tol: float = 1e-8
    max_iter: int = 200
    stall_ratio: float = 0.9
    grid: TimeGrid = TimeGrid(kind="graded", dt=0.02, ratio=1.2, floor=1e-6, coarsen_after=20.0)
    n_sphere: int = 8


DEFAULT_SETTINGS = SolverSettings()


@dataclass(frozen=True)
class ConstantsLedger:
    c: float
    rho0: float
    rho: float
    r: float
    eps: float
    mu: float
    kappa_star: float
    kappa: float
    T2: float = 0.0
    mode: str = "empirical"
    c_source: str = "manual"

    @property
    def T1(self) -> float:
        if not 0 < self.r < self.rho0:
            return math.nan
        return -(2.0 / self.mu) * math.log(self.r / self.rho0)

    @property
    def T0(self) -> float:
        return max(self.T1, self.T2)

    @property
    def zplus_radius(self) -> float:
        return self.rho / (2.0 * self.c)

    def to_dict(self) -> dict:
        return {"c": self.c, "rho0": self.rho0, "rho": self.rho, "r": self.r, "eps": self.eps,
                "mu": self.mu, "kappa_star": self.kappa_star, "kappa": self.kappa, "T1": self.T1,
                "T2": self.T2, "T0": self.T0, "mode": self.mode, "c_source": self.c_source}


def validate_ledger(ledger: ConstantsLedger, gap: float | None = None,
                    probe_ratios=None, ratio_bound: float = 0.6) -> dict:
    """Evaluate the smallness conditions; in empirical mode also the probe contraction ratios."""
    L = ledger
    checks = []

    def check(name, value, bound, ok):
        checks.append({"name": name, "value": value, "bound": bound, "pass": bool(ok)})

    positive = all(v > 0 for v in (L.c, L.rho0, L.rho, L.r, L.eps, L.mu, L.kappa_star)) and L.kappa >= 0
    check("positive_fields", None, None, positive)
    check("c_at_least_one", L.c, 1.0, L.c >= 1.0)
    if gap is not None:
        check("mu_in_gap", L.mu, gap, 0 < L.mu < gap)
    rho0_val = L.c ** 2 * L.rho0 * L.kappa_star * _bracket(L.mu) if L.mu > 0 else math.inf
    check("rho0_smallness", rho0_val, 0.125, rho0_val <= 0.125)
    rho_val = L.c * L.kappa * _bracket(L.mu, L.c) if L.mu > 0 else math.inf
    check("rho_smallness", rho_val, 0.125, rho_val <= 0.125)
    check("rho_le_half_rho0", L.rho, L.rho0 / 2, L.rho <= L.rho0 / 2)
    check("r_in_0_rho0", L.r, L.rho0, 0 < L.r < L.rho0)
    T1 = L.T1
    check("T1_positive", T1, 0.0, bool(T1 > 0))
    check("T0_is_max", L.T0, None, bool(L.T0 == max(T1, L.T2)) if not math.isnan(T1) else False)
    structural = [c["pass"] for c in checks if c["name"] not in ("rho0_smallness", "rho_smallness")]
    theoretical_ok = all(c["pass"] for c in checks)
    report = {"mode": L.mode, "checks": checks, "theoretical_valid": theoretical_ok}
    if L.mode == "empirical":
        if probe_ratios is None:
            report["probe"] = {"ran": False}
            report["valid"] = False
        else:
            worst = float(max(probe_ratios, default=0.0))
            report["probe"] = {"ran": True, "max_ratio": worst, "bound": ratio_bound}
            report["valid"] = all(structural) and worst <= ratio_bound
    else:
        report["valid"] = theoretical_ok
    return report


@dataclass
class GraphPoint:
    T: float                          # math.inf for the stable manifold
    gamma: LoopField
    z_plus: LoopField
    G_value: LoopField
    xi0: LoopField
    trajectory: Trajectory
    iters: int
    ratios: list
    endpoint_residuals: dict = field(default_factory=dict)
    gamma_id: int | None = None
    fp_residual: float = 0.0
    center_distance: float = 0.0

    def to_json(self) -> dict:
        def cf(u: LoopField):
            return {"re": u.coeffs.real.tolist(), "im": u.coeffs.imag.tolist()}
        return {
            "T": "inf" if math.isinf(self.T) else self.T,
            "gamma_id": self.gamma_id,
            "z_plus_coeffs": cf(self.z_plus),
            "G_coeffs": cf(self.G_value),
            "iters": self.iters,
            "ratios": [float(r) for r in self.ratios],
            "endpoint_residuals": self.endpoint_residuals,
            "fp_residual": self.fp_residual,
        }


def horizon(ledger: ConstantsLedger, settings: SolverSettings = DEFAULT_SETTINGS) -> float:
    """Truncation S_max of the half-line: rho e^{-S mu/2} < fp_tol/10."""
    return (2.0 / ledger.mu) * math.log(10.0 * ledger.rho / settings.fp_tol)


def _contract(flow: LocalFlow, s: np.ndarray, hom: np.ndarray, weight: np.ndarray, init: np.ndarray,
              settings: SolverSettings, rhs=None, what: str = "graph map"):
    """Banach iteration W <- hom + fwd(pi_+ g(W)) - bwd(pi_- g(W)) in the weighted norm."""
    plus = flow.plus
    wts = duhamel.step_weights(np.abs(flow.lam), np.diff(s))
    g_of = flow.f if rhs is None else rhs

    def Psi(W):
        g = g_of(W)
        out = hom.copy()
        if plus.any():
            out[:, plus] += duhamel.forward(tuple(a[:, plus] for a in wts), g[:, plus])
        if (~plus).any():
            out[:, ~plus] -= duhamel.backward(tuple(a[:, ~plus] for a in wts), g[:, ~plus])
        return out

    W = init
    ratios = []
    prev = None
    diff = math.inf
    for it in range(1, settings.max_iter + 1):
        Wn = Psi(W)
        diff = float(np.max(weight * flow.w12(Wn - W)))
        scale = max(1.0, float(np.max(weight * flow.w12(Wn))))
        if prev is not None and prev > 1e-13 * scale:
            ratios.append(diff / prev)
        W, prev = Wn, diff
        if diff < settings.fp_tol:
            return W, it, ratios, diff
        if len(ratios) >= 3 and all(r > settings.stall_ratio for r in ratios[-3:]):
            raise ContractionStall(f"{what}: contraction ratio above {settings.stall_ratio} "
                                   f"for 3 iterations", ratios)
    raise ContractionStall(f"{what}: no convergence after {settings.max_iter} iterations "
                           f"(last change {diff:.3e})", ratios)


def _check_subspace(flow: LocalFlow, c: np.ndarray, part: str, label: str) -> np.ndarray:
    w = flow.to_eig(c)
    other = ~flow.plus if part == "plus" else flow.plus
    if np.linalg.norm(w[other]) > 1e-10 * max(1.0, np.linalg.norm(w)):
        raise ValueError(f"{label} is not in X{'+' if part == 'plus' else '-'}")
    w[other] = 0.0
    return w


def _stable_grid(ledger, settings) -> np.ndarray:
    return settings.grid.nodes(horizon(ledger, settings))


def solve_stable(dec, model: TorusModel, x: CriticalLoop, ledger: ConstantsLedger, z_plus: LoopField,
                 settings: SolverSettings = DEFAULT_SETTINGS) -> GraphPoint:
    """Fixed point of the stable-manifold contraction; returns the graph point Gamma^inf(z_+)."""
    flow = LocalFlow.of(dec, model, x)
    zp = _check_subspace(flow, z_plus.real_coords(), "plus", "z_plus")
    if flow.w12(zp) > ledger.zplus_radius * (1 + 1e-12):
        raise BallViolation(f"||z_plus||_W12 = {flow.w12(zp):.4g} exceeds rho/(2c) = {ledger.zplus_radius:.4g}")
    s = _stable_grid(ledger, settings)
    hom = np.exp(-np.outer(s, np.where(flow.plus, flow.lam, 0.0))) * zp
    weight = np.exp(s * ledger.mu / 2)
    W, iters, ratios, res = _contract(flow, s, hom, weight, hom.copy(), settings, what="stable manifold")
    return _graph_point(flow, dec, x, math.inf, None, z_plus, s, W, iters, ratios, res)


def _graph_point(flow, dec, x, T, gamma, z_plus, s, W, iters, ratios, res, gamma_id=None,
                 center=None, weight=None) -> GraphPoint:
    C = flow.to_coords(W)
    xi0 = LoopField.from_real(C[0], dec.J, dec.n)
    w0 = W[0].copy()
    w0[flow.plus] = 0.0
    G = LoopField.from_real(flow.to_coords(w0), dec.J, dec.n)
    traj = Trajectory(s, C, dec.J, dec.n, base=x.x, meta={"solver": "contraction", "T": T})
    dist = float(np.max(weight * flow.w12(W - center))) if center is not None else 0.0
    return GraphPoint(T=T, gamma=gamma if gamma is not None else LoopField.zeros(dec.J, dec.n),
                      z_plus=z_plus, G_value=G, xi0=xi0, trajectory=traj, iters=iters, ratios=ratios,
                      gamma_id=gamma_id, fp_residual=res, center_distance=dist)


def _unstable_core(flow: LocalFlow, s: np.ndarray, zm: np.ndarray, ledger, settings):
    """Fixed point on a grid s_0 < ... < s_M = 0 with pi_- W(0) = zm."""
    lam_minus = np.where(flow.plus, 0.0, flow.lam)
    hom = np.exp(-np.outer(s, lam_minus)) * zm
    weight = np.exp(-s * ledger.mu / 2)
    return _contract(flow, s, hom, weight, hom.copy(), settings, what="unstable manifold")


def _unstable_grid(T_shift_nodes: np.ndarray | None, total: float, settings: SolverSettings) -> np.ndarray:
    """Backward grid ending at 0; optionally contains -T + (given forward nodes on [0, T])."""
    g = settings.grid
    tail_grid = TimeGrid(kind="uniform", dt=g.dt, coarsen_after=g.coarsen_after,
                         tail_ratio=g.tail_ratio, tail_max=g.tail_max)
    if T_shift_nodes is None:
        back = tail_grid.nodes(total)
        return -back[::-1]
    T = T_shift_nodes[-1]
    near = T_shift_nodes - T                      # covers [-T, 0]
    if total <= T:
        return near
    far = -T - tail_grid.nodes(total - T)[1:][::-1]
    return np.concatenate([far, near])


def solve_unstable(dec, model: TorusModel, x: CriticalLoop, ledger: ConstantsLedger, z_minus: LoopField,
                   settings: SolverSettings = DEFAULT_SETTINGS, grid: np.ndarray | None = None,
                   check_ball: bool = True) -> Trajectory:
    """Heat-flow line on (-inf, 0] emanating from the critical point with pi_- eta(0) = z_minus.

    The returned trajectory lives on a truncated grid [-S_max, 0]; its final
    state is the point of the local unstable manifold.
    """
    flow = LocalFlow.of(dec, model, x)
    zm = _check_subspace(flow, z_minus.real_coords(), "minus", "z_minus")
    if check_ball and flow.w12(zm) > ledger.rho * (1 + 1e-12):
        raise BallViolation(f"||z_minus||_W12 = {flow.w12(zm):.4g} exceeds rho = {ledger.rho:.4g}")
    s = _unstable_grid(None, horizon(ledger, settings), settings) if grid is None else np.asarray(grid)
    W, iters, ratios, res = _unstable_core(flow, s, zm, ledger, settings)
    return Trajectory(s, flow.to_coords(W), dec.J, dec.n, base=x.x,
                      meta={"solver": "contraction", "iters": iters, "ratios": ratios, "fp_residual": res})


def _minus_part(flow: LocalFlow, u: LoopField) -> np.ndarray:
    w = flow.to_eig(u.real_coords())
    w[flow.plus] = 0.0
    return w


def minus_directions(k: int, n_sphere: int = 8) -> np.ndarray:
    """Deterministic unit directions on S^{k-1}: +-1, an equal-angle circle, or +-axes."""
    if k == 1:
        return np.array([[1.0], [-1.0]])
    if k == 2:
        th = 2 * np.pi * np.arange(n_sphere) / n_sphere
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    eye = np.eye(k)
    return np.concatenate([eye, -eye])


def descending_sphere(model: TorusModel, x: CriticalLoop, dec, eps: float, ledger: ConstantsLedger,
                      settings: SolverSettings = DEFAULT_SETTINGS, eps0: float | None = None) -> list[LoopField]:
    """Points of the unstable manifold on the level c - eps, one per sampled direction."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if eps0 is not None and eps > eps0:
        raise ValueError(f"eps={eps} exceeds eps0={eps0}")
    flow = LocalFlow.of(dec, model, x)
    k = dec.morse_index
    if k == 0:
        return []
    target = x.c - eps
    c0 = x.x.real_coords()
    s = _unstable_grid(None, horizon(ledger, settings), settings)
    out = []
    for u in minus_directions(k, settings.n_sphere):
        w = np.zeros(dec.dim)
        w[:k] = u
        w = w / flow.w12(w)

        def endpoint(delta):
            W, *_ = _unstable_core(flow, s, delta * w, ledger, settings)
            return W[-1]

        def gap(delta):
            end = flow.to_coords(endpoint(delta))
            return action(model, LoopField.from_real(c0 + end, dec.J, dec.n)) - target

        hi = ledger.rho
        g_hi = gap(hi)
        if not g_hi < 0:
            raise BisectionFail(f"level c-eps not reached within the ball of radius {hi:g} "
                                f"(action gap {g_hi:.3e})")
        delta = brentq(gap, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        if abs(gap(delta)) > settings.action_tol:
            raise BisectionFail(f"action mismatch {gap(delta):.3e} after root finding")
        out.append(LoopField.from_real(flow.to_coords(endpoint(delta)), dec.J, dec.n))
    return out


def _backward_trajectory(flow, dec, model, x, ledger, gamma: LoopField, s_mixed: np.ndarray, settings):
    """Unstable-manifold line through gamma at time 0, sampled at s - T for s in ``s_mixed``."""
    T = s_mixed[-1]
    key = ("backward", gamma.coeffs.tobytes(), float(T), ledger, settings)
    hit = flow.dec._cache.get(key)
    if hit is not None:
        return hit
    total = T + horizon(ledger, settings)
    grid = _unstable_grid(s_mixed, total, settings)
    W, iters, ratios, res = _unstable_core(flow, grid, _minus_part(flow, gamma), ledger, settings)
    W.setflags(write=False)
    flow.dec._cache[key] = out = (W[-s_mixed.size:], grid)
    return out


def backward_point(model: TorusModel, x: CriticalLoop, dec, ledger: ConstantsLedger, gamma: LoopField,
                   T: float, settings: SolverSettings = DEFAULT_SETTINGS) -> LoopField:
    """phi_{-T} gamma for gamma on the unstable manifold."""
    if T == 0:
        return gamma
    if T < 0:
        raise ValueError("backward time must be nonnegative")
    flow = LocalFlow.of(dec, model, x)
    s = settings.grid.nodes(T)
    W, _ = _backward_trajectory(flow, dec, model, x, ledger, gamma, s, settings)
    return LoopField.from_real(flow.to_coords(W[0]), dec.J, dec.n)


def compute_T2(model: TorusModel, x: CriticalLoop, dec, ledger: ConstantsLedger, gammas,
               settings: SolverSettings = DEFAULT_SETTINGS) -> float:
    """Smallest T2 with phi_{-T2/4} of the sampled descending disk inside B_rho."""
    flow = LocalFlow.of(dec, model, x)
    s = _unstable_grid(None, horizon(ledger, settings), settings)
    worst = 0.0
    for g in gammas:
        W, *_ = _unstable_core(flow, s, _minus_part(flow, g), ledger, settings)
        norms = flow.w12(W)
        outside = np.nonzero(norms > ledger.rho)[0]
        if outside.size:
            worst = max(worst, -float(s[outside.min()]))
    return 4.0 * worst


def solve_mixed(dec, model: TorusModel, x: CriticalLoop, ledger: ConstantsLedger, T: float, gamma: LoopField,
                z_plus: LoopField, settings: SolverSettings = DEFAULT_SETTINGS,
                gamma_id: int | None = None, check_fiber: bool = True,
                warn_below_T0: bool = True) -> GraphPoint:
    """Mixed Cauchy problem: pi_+ xi(0) = z_+, pi_- xi(T) = pi_- gamma; returns Gamma^T_gamma(z_+)."""
    if T <= 0:
        raise ValueError("T must be positive")
    if warn_below_T0 and T < ledger.T0:
        warnings.warn(f"T={T:.4g} below T0={ledger.T0:.4g}; the contraction still runs", stacklevel=2)
    flow = LocalFlow.of(dec, model, x)
    zp = _check_subspace(flow, z_plus.real_coords(), "plus", "z_plus")
    if flow.w12(zp) > ledger.zplus_radius * (1 + 1e-12):
        raise BallViolation(f"||z_plus||_W12 = {flow.w12(zp):.4g} exceeds rho/(2c) = {ledger.zplus_radius:.4g}")
    s = settings.grid.nodes(T)
    center, _ = _backward_trajectory(flow, dec, model, x, ledger, gamma, s, settings)
    gm = _minus_part(flow, gamma)
    lam_p = np.where(flow.plus, flow.lam, 0.0)
    lam_m = np.where(flow.plus, 0.0, flow.lam)
    hom = np.exp(-np.outer(s, lam_p)) * zp + np.exp(-np.outer(s - T, lam_m)) * gm
    weight = np.exp(s * ledger.mu / 2)
    W, iters, ratios, res = _contract(flow, s, hom, weight, center.copy(), settings, what="mixed problem")
    pt = _graph_point(flow, dec, x, T, gamma, z_plus, s, W, iters, ratios, res, gamma_id=gamma_id,
                      center=center, weight=weight)
    minus_res = float(flow.w12(np.where(flow.plus, 0.0, W[-1] - gm)))
    fiber_dist = float(flow.w12(W[-1] - flow.to_eig(gamma.real_coords())))
    pt.endpoint_residuals = {"minus_endpoint": minus_res, "fiber_distance": fiber_dist, "r": ledger.r,
                             "center_distance": pt.center_distance, "rho": ledger.rho}
    if check_fiber and (minus_res > settings.fiber_tol or fiber_dist > ledger.r):
        raise FiberMiss(f"endpoint misses the fiber: minus residual {minus_res:.3e}, "
                        f"||xi(T)-gamma|| = {fiber_dist:.3e} (r = {ledger.r:g})")
    return pt


def linearized_graph(dec, model: TorusModel, x: CriticalLoop, ledger: ConstantsLedger, T: float,
                     gamma: LoopField | None, z_plus: LoopField, v: LoopField,
                     settings: SolverSettings = DEFAULT_SETTINGS, point: GraphPoint | None = None,
                     info: dict | None = None) -> LoopField:
    """d Gamma^T_gamma(z_+) v (T finite) or d Gamma^inf(z_+) v (T = inf).

    Solves the linearized fixed-point equation along the base trajectory of
    ``point`` (computed here if not supplied).
    """
    flow = LocalFlow.of(dec, model, x)
    vp = _check_subspace(flow, v.real_coords(), "plus", "v")
    if not np.any(vp):
        raise ValueError("v must be nonzero")
    if point is None:
        if math.isinf(T):
            point = solve_stable(dec, model, x, ledger, z_plus, settings)
        else:
            point = solve_mixed(dec, model, x, ledger, T, gamma, z_plus, settings, check_fiber=False)
    s = point.trajectory.grid
    base = flow.to_eig(point.trajectory.coords)
    hom = np.exp(-np.outer(s, np.where(flow.plus, flow.lam, 0.0))) * vp
    weight = np.exp(s * ledger.mu / 2)
    lin_settings = replace(settings, fp_tol=settings.fp_tol * max(1.0, float(flow.w12(vp))))
    X, iters, ratios, res = _contract(flow, s, hom, weight, hom.copy(), lin_settings,
                                      rhs=lambda V: flow.df(base, V), what="linearized graph")
    if info is not None:
        info.update({"iters": iters, "ratios": ratios, "fp_residual": res})
    return LoopField.from_real(flow.to_coords(X[0]), dec.J, dec.n)


def probe_contraction(dec, model: TorusModel, x: CriticalLoop, ledger: ConstantsLedger, gamma: LoopField,
                      settings: SolverSettings = DEFAULT_SETTINGS) -> list[float]:
    """Contraction ratios of the stable and mixed iterations at the edge of B^+ (T = T0)."""
    flow = LocalFlow.of(dec, model, x)
    w = np.zeros(dec.dim)
    w[dec.morse_index] = 1.0
    zp = LoopField.from_real(flow.to_coords(w * ledger.zplus_radius / flow.w12(w)), dec.J, dec.n)
    ratios = list(solve_stable(dec, model, x, ledger, zp, settings).ratios)
    T = ledger.T0 if ledger.T0 > 0 else 1.0
    ratios += list(solve_mixed(dec, model, x, ledger, T, gamma, zp, settings, check_fiber=False,
                               warn_below_T0=False).ratios)
    return ratios
