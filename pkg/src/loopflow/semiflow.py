"""Forward integration of the local semiflow and its independent checks."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import duhamel
from . import loopspace as ls
from .duhamel import LocalFlow
from .errors import GridError, StepRejected, StiffnessAbort
from .loopspace import LoopField
from .model import CriticalLoop, TorusModel, action, grad_potential

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    """Time nodes: geometric clustering toward s=0, then uniform steps.

    With ``coarsen_after`` set, steps beyond that time grow by ``tail_ratio``
    up to ``tail_max``; used for long horizons where the states have decayed.
    """

    kind: str = "graded"
    dt: float = 0.01
    ratio: float = 1.2
    floor: float = 1e-6
    coarsen_after: float | None = None
    tail_ratio: float = 1.1
    tail_max: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "graded"):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if self.dt <= 0 or self.floor <= 0 or self.ratio <= 1:
            raise ValueError("grid needs dt > 0, floor > 0 and ratio > 1")

    def nodes(self, T: float) -> np.ndarray:
        if T <= 0:
            raise GridError(f"time horizon must be positive, got {T}")
        pts = [0.0]
        h = self.floor if self.kind == "graded" else self.dt
        s = 0.0
        while True:
            if self.coarsen_after is not None and s >= self.coarsen_after:
                h = min(max(h, self.dt) * self.tail_ratio, self.tail_max)
            if s + h >= T:
                break
            s += h
            pts.append(s)
            if self.kind == "graded" and h < self.dt:
                h = min(h * self.ratio, self.dt)
        if len(pts) > 1 and T - pts[-1] < 0.25 * h:
            pts[-1] = T
        else:
            pts.append(T)
        return np.asarray(pts)


DEFAULT_GRID = TimeGrid()


@dataclass
class Trajectory:
    grid: np.ndarray
    coords: np.ndarray               # (M, D) real coordinates of the states
    J: int
    n: int = 1
    base: LoopField | None = None    # critical loop the chart is centered at
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.coords = np.asarray(self.coords, dtype=float)
        if self.grid.ndim != 1 or np.any(np.diff(self.grid) <= 0):
            raise GridError("trajectory grid must be strictly increasing")
        if self.coords.shape[0] != self.grid.size:
            raise GridError("one state per grid node required")

    def __len__(self):
        return self.grid.size

    def state(self, i: int) -> LoopField:
        return LoopField.from_real(self.coords[i], self.J, self.n)

    @property
    def states(self) -> list[LoopField]:
        return [self.state(i) for i in range(len(self))]

    @property
    def final(self) -> LoopField:
        return self.state(-1)

    @property
    def left_chart(self) -> bool:
        return bool(self.meta.get("left_chart", False))

    def w12_norms(self) -> np.ndarray:
        return ls.w12_norm_coords(self.coords, self.J, self.n)


def evolve(dec, model: TorusModel, x: CriticalLoop, z: LoopField, T: float,
           grid: TimeGrid | np.ndarray | None = None, rho0: float | None = None,
           corrections: int = 1, step_tol: float = 1e-4) -> Trajectory:
    """Exponential (Duhamel) integration of zeta' + A zeta = f(zeta), zeta(0) = z.

    Per step the forcing is interpolated linearly between the endpoint values
    and integrated exactly per eigenmode; the predictor freezes f at the left
    node, each correction re-evaluates f at the current endpoint estimate.
    Leaving the ball of radius ``rho0`` ends the trajectory early with
    ``meta["left_chart"] = True``.
    """
    flow = LocalFlow.of(dec, model, x)
    s = grid if isinstance(grid, np.ndarray) else (grid or DEFAULT_GRID).nodes(T)
    s = np.asarray(s, dtype=float)
    if s[0] != 0.0:
        raise GridError("integration grid must start at 0")
    decay, w_old, w_new = duhamel.step_weights(flow.lam, np.diff(s))
    W = np.empty((s.size, flow.lam.size))
    W[0] = flow.to_eig(z.real_coords())
    g = flow.f(W[:1])[0]
    left = False
    max_change = 0.0
    stop = s.size
    for m in range(s.size - 1):
        base = decay[m] * W[m]
        nxt = base + (w_old[m] + w_new[m]) * g
        for _ in range(corrections):
            g_new = flow.f(nxt[None])[0]
            corr = base + w_old[m] * g + w_new[m] * g_new
            change = float(flow.w12(corr - nxt))
            nxt = corr
        max_change = max(max_change, change) if corrections else 0.0
        if corrections and change > step_tol:
            raise StepRejected(f"corrector change {change:.3e} exceeds step_tol at s={s[m + 1]:.4g}")
        W[m + 1] = nxt
        g = flow.f(nxt[None])[0]
        if rho0 is not None and flow.w12(nxt) > rho0:
            left = True
            stop = m + 2
            log.info("trajectory left the chart ball at s=%.4g", s[m + 1])
            break
    traj = Trajectory(s[:stop], flow.to_coords(W[:stop]), dec.J, dec.n, base=x.x,
                      meta={"solver": "duhamel", "left_chart": left, "corrections": corrections,
                            "max_corrector_change": max_change})
    return traj


def _second_derivative_matrix(J: int) -> np.ndarray:
    """Nodal matrix of the spectral d^2/dt^2 on the 2J+1 collocation nodes."""
    B = ls.synthesis_matrix(J)
    k2 = (2 * np.pi * ls.real_wavenumbers(J)) ** 2
    return (B * -k2) @ ls.analysis_matrix(J)


def evolve_oracle(model: TorusModel, x: CriticalLoop, z, T: float, t_eval=None,
                  rtol: float = 1e-10, atol: float = 1e-13, min_step: float = 1e-10) -> Trajectory | list:
    """Method of lines for u_s = u_tt + grad V_t(u), u = x + zeta, explicit adaptive RK45.

    Does not use the Jacobi operator or the eigenbasis.  ``z`` may be a single
    LoopField or a list of them (integrated together as one system); a list in
    gives a list of trajectories back.
    """
    batch = isinstance(z, (list, tuple))
    zs = list(z) if batch else [z]
    J, n = x.x.J, x.x.n
    N = ls.n_nodes(J)
    t = ls.nodes(J)
    xg = ls.inverse(x.x).values
    u0 = np.stack([xg + ls.inverse(zz).values for zz in zs])            # (B, N, n)
    shape = u0.shape
    D2 = _second_derivative_matrix(J)
    # differentiate the small deviation from x; keeps rounding noise at the size of u - x
    xc = x.x.real_coords()
    xtt = ls.coords_to_grid(-(2 * np.pi * np.tile(ls.real_wavenumbers(J), n)) ** 2 * xc, J, n)

    def rhs(_s, y):
        u = y.reshape(shape)
        return (D2 @ (u - xg) + xtt + grad_potential(model, t, u)).ravel()

    if t_eval is None:
        t_eval = DEFAULT_GRID.nodes(T)
    t_eval = np.asarray(t_eval, dtype=float)
    sol = solve_ivp(rhs, (0.0, T), u0.ravel(), method="RK45", t_eval=t_eval, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise StiffnessAbort(f"oracle integration failed: {sol.message}")
    steps = int(sol.nfev // 6)
    if steps and T / steps < min_step:
        raise StiffnessAbort(f"average oracle step {T / steps:.3e} below {min_step:g}")
    U = sol.y.T.reshape((t_eval.size,) + shape)
    out = []
    for b in range(len(zs)):
        zeta = U[:, b] - xg
        out.append(Trajectory(t_eval, ls.grid_to_coords(zeta, J, n), J, n, base=x.x,
                              meta={"solver": "rk45-oracle", "nfev": int(sol.nfev), "rtol": rtol}))
    return out if batch else out[0]


def representation_rhs(dec, model: TorusModel, x: CriticalLoop, traj: Trajectory,
                       T_split: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Right side of the representation formula at every node s <= T_split.

    Plus part forward from xi(0), minus part anchored at xi(T_split) through the
    backward group.  Returns (rhs in eigen coords, stored states in eigen coords).
    """
    flow = LocalFlow.of(dec, model, x)
    s = traj.grid
    end = s.size - 1 if T_split is None else int(np.argmin(np.abs(s - T_split)))
    if T_split is not None and abs(s[end] - T_split) > 1e-12:
        raise GridError(f"T_split={T_split} is not a grid node")
    s = s[:end + 1]
    W = flow.to_eig(traj.coords[:end + 1])
    g = flow.f(W)
    plus = flow.plus
    wts = duhamel.step_weights(np.abs(flow.lam), np.diff(s))
    rhs = np.empty_like(W)
    fwd = duhamel.forward(wts, np.where(plus, g, 0.0))
    bwd = duhamel.backward(wts, np.where(plus, 0.0, g))
    lp, lm = flow.lam[plus], flow.lam[~plus]
    rhs[:, plus] = np.exp(-np.outer(s, lp)) * W[0, plus] + fwd[:, plus]
    rhs[:, ~plus] = np.exp(-np.outer(s - s[-1], lm)) * W[-1, ~plus] - bwd[:, ~plus]
    return rhs, W


def residual_representation(dec, model: TorusModel, x: CriticalLoop, traj: Trajectory,
                            T_split: float | None = None) -> float:
    """Max W12 discrepancy between stored states and the representation formula."""
    flow = LocalFlow.of(dec, model, x)
    rhs, W = representation_rhs(dec, model, x, traj, T_split)
    return float(np.max(flow.w12(rhs - W)))


def action_along(model: TorusModel, traj: Trajectory, x: CriticalLoop | None = None) -> np.ndarray:
    base = x.x if x is not None else traj.base
    if base is None:
        raise ValueError("trajectory carries no base loop; pass x")
    c0 = base.real_coords()
    return np.array([action(model, LoopField.from_real(c0 + c, traj.J, traj.n)) for c in traj.coords])


def write_trajectory_csv(traj: Trajectory, path) -> None:
    D = traj.coords.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s"] + [f"c{i}" for i in range(D)])
        for s, row in zip(traj.grid, traj.coords):
            w.writerow([repr(float(s))] + [repr(float(v)) for v in row])


def trajectory_summary(model: TorusModel, traj: Trajectory, **extra) -> dict:
    acts = action_along(model, traj)
    out = {
        "T": float(traj.grid[-1]),
        "nodes": int(len(traj)),
        "left_chart": traj.left_chart,
        "w12_initial": float(traj.w12_norms()[0]),
        "w12_final": float(traj.w12_norms()[-1]),
        "action_initial": float(acts[0]),
        "action_final": float(acts[-1]),
        "meta": {k: v for k, v in traj.meta.items() if isinstance(v, (int, float, str, bool))},
    }
    out.update(extra)
    return out


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
