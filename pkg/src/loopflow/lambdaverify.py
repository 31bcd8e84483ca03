"""Convergence sweeps and audits for the time-T graph maps.

A sweep runs the mixed and stable solvers over a grid of (T, gamma, z_+) and
records ||Gamma^T_gamma(z_+) - Gamma^inf(z_+)||_{W12}; decay rates come from
least-squares fits of log(distance) against T.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import graphmaps as gm
from . import loopspace as ls
from . import semigroup, spectral
from .errors import LoopflowError
from .graphmaps import ConstantsLedger, SolverSettings
from .loopspace import LoopField
from .model import CriticalLoop, TorusModel, estimate_kappa, find_critical_loop
from .semiflow import evolve, evolve_oracle

log = logging.getLogger(__name__)

_DIST_FLOOR = 1e-13


@dataclass
class Setup:
    """Everything a sweep needs: model, critical loop, splitting, ledger and sphere points."""

    model: TorusModel
    x: CriticalLoop
    dec: spectral.SpectralDecomposition
    ledger: ConstantsLedger
    settings: SolverSettings
    gammas: list
    c_hat: float
    ledger_report: dict = field(default_factory=dict)
    rate_tol_fraction: float = 0.05
    _points: dict = field(default_factory=dict, repr=False)

    def gamma(self, i: int) -> LoopField:
        return self.gammas[i]


def build_setup(model: TorusModel, guess: LoopField, rho0: float, rho: float, r: float, eps: float,
                mu_fraction: float = 0.5, c: float | None = None, mode: str = "empirical",
                settings: SolverSettings = gm.DEFAULT_SETTINGS, gamma_count: int | None = None,
                kappa_samples: int = 400, seed: int = 0, degeneracy_tol: float = 1e-8,
                newton_tol: float = 1e-10, eps0: float | None = None,
                rate_tol_fraction: float = 0.05) -> Setup:
    x = find_critical_loop(model, guess, newton_tol=newton_tol)
    dec = spectral.decompose(spectral.assemble(model, x), mu_fraction, degeneracy_tol)
    c_hat = semigroup.semigroup_constant(dec)["c"]
    kap = estimate_kappa(model, x, rho, samples=kappa_samples, seed=seed)["kappa"]
    kap0 = estimate_kappa(model, x, rho0, samples=kappa_samples, seed=seed)["kappa_star"]
    ledger = ConstantsLedger(c=c_hat if c is None else c, rho0=rho0, rho=rho, r=r, eps=eps, mu=dec.mu,
                             kappa_star=max(1.0, kap0), kappa=kap, mode=mode,
                             c_source="audit" if c is None else "manual")
    sphere = gm.descending_sphere(model, x, dec, eps, ledger, settings, eps0=eps0)
    if gamma_count is not None:
        sphere = sphere[:gamma_count]
    T2 = gm.compute_T2(model, x, dec, ledger, sphere, settings)
    ledger = ConstantsLedger(**{**_ledger_fields(ledger), "T2": T2})
    probe = gm.probe_contraction(dec, model, x, ledger, sphere[0], settings) if sphere else []
    report = gm.validate_ledger(ledger, dec.gap, probe_ratios=probe)
    return Setup(model, x, dec, ledger, settings, sphere, c_hat, report, rate_tol_fraction)


def _ledger_fields(L: ConstantsLedger) -> dict:
    return {k: getattr(L, k) for k in ("c", "rho0", "rho", "r", "eps", "mu", "kappa_star", "kappa",
                                       "T2", "mode", "c_source")}


@dataclass(frozen=True)
class SweepSpec:
    T_list: tuple
    gamma_count: int = 2
    zplus_count: int = 5              # sample 0 is z_+ = 0
    zplus_fraction: float = 0.5       # of the B^+ radius rho/(2c)
    v_count: int = 3
    seed: int = 0
    modes: int = 6                    # lowest plus eigenvectors used for random samples
    taus: tuple = (0.1, 0.05, 0.025)

    def __post_init__(self):
        if not self.T_list or self.gamma_count < 1 or self.zplus_count < 1 or self.v_count < 1:
            raise ValueError("sweep lists must be nonempty")
        if list(self.T_list) != sorted(self.T_list) or len(set(self.T_list)) != len(self.T_list):
            raise ValueError("T_list must be strictly increasing")
        if not 0 < self.zplus_fraction <= 1:
            raise ValueError("zplus_fraction must lie in (0, 1]")

    @classmethod
    def default(cls, T0: float, **kw) -> "SweepSpec":
        return cls(T_list=tuple(float(T0 + d) for d in np.arange(0.0, 4.01, 0.5)), **kw)


@dataclass
class SweepResult:
    kind: str
    rows: list
    fitted_rate: float
    bound_rate: float
    group_rates: dict
    checks: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"kind": self.kind, "fitted_rate": self.fitted_rate, "bound_rate": self.bound_rate,
                "group_rates": self.group_rates, "checks": self.checks, "rows": len(self.rows),
                "failed_rows": sum(1 for r in self.rows if r.get("error"))}


def _plus_field(setup: Setup, w_plus: np.ndarray) -> LoopField:
    dec = setup.dec
    w = np.zeros(dec.dim)
    w[dec.morse_index:dec.morse_index + w_plus.size] = w_plus
    return LoopField.from_real(dec.from_eig(w), dec.J, dec.n)


def zplus_samples(setup: Setup, spec: SweepSpec) -> list[LoopField]:
    """z_+ = 0 followed by random combinations of low plus modes on the sphere of radius fraction*rho/(2c)."""
    rng = np.random.default_rng(spec.seed)
    radius = spec.zplus_fraction * setup.ledger.zplus_radius
    out = [LoopField.zeros(setup.dec.J, setup.dec.n)]
    for _ in range(spec.zplus_count - 1):
        u = _plus_field(setup, rng.standard_normal(spec.modes))
        out.append(u * (radius / ls.norm(u, ls.W12)))
    return out


def v_samples(setup: Setup, spec: SweepSpec) -> list[LoopField]:
    """Lowest plus eigenvector, then random low-mode combinations; all L2-normalized."""
    rng = np.random.default_rng(spec.seed + 1)
    out = [setup.dec.eigenvector(setup.dec.morse_index)]
    for _ in range(spec.v_count - 1):
        u = _plus_field(setup, rng.standard_normal(spec.modes))
        out.append(u * (1.0 / ls.norm(u, ls.L2)))
    return out


def _pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def fit_rate(T, dist) -> float:
    """Decay rate -slope of the least-squares line through (T, log dist); nan if under two usable points."""
    T, dist = np.asarray(T, float), np.asarray(dist, float)
    ok = np.isfinite(dist) & (dist > _DIST_FLOOR)
    if ok.sum() < 2:
        return math.nan
    return float(-np.polyfit(T[ok], np.log(dist[ok]), 1)[0])


def pooled_rate(groups: dict) -> float:
    """Common slope across groups with group-specific intercepts (demeaned least squares)."""
    num = den = 0.0
    for T, dist in groups.values():
        T, dist = np.asarray(T, float), np.asarray(dist, float)
        ok = np.isfinite(dist) & (dist > _DIST_FLOOR)
        if ok.sum() < 2:
            continue
        t, y = T[ok] - T[ok].mean(), np.log(dist[ok])
        num += float(t @ (y - y.mean()))
        den += float(t @ t)
    return -num / den if den > 0 else math.nan


def _quiet_mixed(setup: Setup, T, gi, zp, check_fiber=True):
    """Mixed solve without the below-T0 warning; results are memoized on the setup."""
    key = (float(T), gi, zp.coeffs.tobytes(), check_fiber)
    pt = setup._points.get(key)
    if pt is None:
        pt = gm.solve_mixed(setup.dec, setup.model, setup.x, setup.ledger, T, setup.gamma(gi), zp,
                            setup.settings, gamma_id=gi, check_fiber=check_fiber, warn_below_T0=False)
        setup._points[key] = pt
    return pt


def _stable_points(setup: Setup, zps, jobs):
    return _pmap(lambda zp: gm.solve_stable(setup.dec, setup.model, setup.x, setup.ledger, zp, setup.settings),
                 zps, jobs)


def _grid(spec: SweepSpec, setup: Setup):
    nz = spec.zplus_count
    ng = min(spec.gamma_count, len(setup.gammas))
    return [(T, gi, zi) for gi in range(ng) for zi in range(nz) for T in spec.T_list]


def _groups(rows, key_fields, value):
    groups = {}
    for r in rows:
        if r.get("error") or value not in r:
            continue
        key = "/".join(f"{k}={r[k]}" for k in key_fields)
        groups.setdefault(key, ([], []))
        groups[key][0].append(r["T"])
        groups[key][1].append(r[value])
    return groups


def sweep_convergence(setup: Setup, spec: SweepSpec, jobs: int = 1) -> SweepResult:
    """||Gamma^T_gamma(z_+) - Gamma^inf(z_+)||_{W12} over the sweep grid, with fitted decay rates."""
    zps = zplus_samples(setup, spec)
    stable = _stable_points(setup, zps, jobs)
    fp_tol = setup.settings.fp_tol

    def row(item):
        T, gi, zi = item
        out = {"T": float(T), "gamma_id": gi, "zplus_id": zi}
        try:
            P = _quiet_mixed(setup, T, gi, zps[zi])
            out.update(dist_W12=ls.norm(P.xi0 - stable[zi].xi0, ls.W12), iters=P.iters,
                       max_ratio=max(P.ratios, default=0.0), fp_residual=P.fp_residual,
                       zplus_exact=ls.norm(_plus_part(setup, P.xi0) - zps[zi], ls.W12),
                       **P.endpoint_residuals)
            if zi == 0:
                out["gammaT_W12"] = ls.norm(P.xi0, ls.W12)
        except LoopflowError as exc:
            out["error"] = f"{type(exc).__name__}: {exc}"
        return out

    rows = _pmap(row, _grid(spec, setup), jobs)
    groups = _groups(rows, ("gamma_id", "zplus_id"), "dist_W12")
    mu = setup.ledger.mu
    rate = pooled_rate(groups)
    checks = {
        "pooled_rate_ge_bound": bool(rate >= mu / 4 - setup.rate_tol_fraction * mu),
        "monotone_in_T": _monotone(groups, 10 * fp_tol),
        "all_rows_ok": not any(r.get("error") for r in rows),
        "max_ratio": max((r.get("max_ratio", 0.0) for r in rows), default=0.0),
        "zero_rows_identity": all(abs(r["dist_W12"] - r["gammaT_W12"]) <= 2 * fp_tol
                                  for r in rows if r.get("zplus_id") == 0 and "dist_W12" in r),
    }
    return SweepResult("convergence", rows, rate, mu / 4,
                       {k: fit_rate(*v) for k, v in groups.items()}, checks)


def _plus_part(setup: Setup, u: LoopField) -> LoopField:
    return spectral.project(setup.dec, u, "plus")


def _monotone(groups: dict, tol: float) -> bool:
    for T, d in groups.values():
        d = np.asarray(d)[np.argsort(T)]
        if np.any(np.diff(d) > tol):
            return False
    return True


def sweep_c1(setup: Setup, spec: SweepSpec, jobs: int = 1) -> SweepResult:
    """||X_v(0) - Y_v(0)||_{L2} over the sweep grid and the L2 bounds of the linearized graphs."""
    zps = zplus_samples(setup, spec)
    vs = v_samples(setup, spec)
    stable = _stable_points(setup, zps, jobs)
    L, dec, model, x, st = setup.ledger, setup.dec, setup.model, setup.x, setup.settings
    Y = {(zi, vi): gm.linearized_graph(dec, model, x, L, math.inf, None, zps[zi], v, st, point=stable[zi])
         for zi in range(len(zps)) for vi, v in enumerate(vs)}

    def row(item):
        T, gi, zi = item
        try:
            P = _quiet_mixed(setup, T, gi, zps[zi])
        except LoopflowError as exc:
            return [{"T": float(T), "gamma_id": gi, "zplus_id": zi, "v_id": vi,
                     "error": f"{type(exc).__name__}: {exc}"} for vi in range(len(vs))]
        out = []
        for vi, v in enumerate(vs):
            r = {"T": float(T), "gamma_id": gi, "zplus_id": zi, "v_id": vi}
            try:
                X = gm.linearized_graph(dec, model, x, L, T, setup.gamma(gi), zps[zi], v, st, point=P)
                nv = ls.norm(v, ls.L2)
                y = Y[(zi, vi)]
                r.update(c1_dist_L2=ls.norm(X - y, ls.L2) / nv, X_ratio_L2=ls.norm(X, ls.L2) / nv,
                         Y_minus_v_L2=ls.norm(y - v, ls.L2) / nv,
                         bound_3c=3 * setup.c_hat * math.exp(-T * L.mu / 4))
            except LoopflowError as exc:
                r["error"] = f"{type(exc).__name__}: {exc}"
            out.append(r)
        return out

    rows = [r for block in _pmap(row, _grid(spec, setup), jobs) for r in block]
    groups = _groups(rows, ("gamma_id", "zplus_id", "v_id"), "c1_dist_L2")
    rate = pooled_rate(groups)
    mu = L.mu
    ok = [r for r in rows if "c1_dist_L2" in r]
    checks = {
        "pooled_rate_ge_bound": bool(rate >= mu / 4 - setup.rate_tol_fraction * mu),
        "X_le_2": all(r["X_ratio_L2"] <= 2.0 for r in ok),
        "Y_minus_v_le_quarter": all(r["Y_minus_v_L2"] <= 0.25 for r in ok),
        "dist_le_3c_bound": all(r["c1_dist_L2"] <= r["bound_3c"] for r in ok),
        "all_rows_ok": len(ok) == len(rows),
    }
    return SweepResult("c1", rows, rate, mu / 4, {k: fit_rate(*v) for k, v in groups.items()}, checks)


def roundtrip_audit(setup: Setup, spec: SweepSpec, jobs: int = 1, oracle_T: tuple | None = None,
                    oracle_rtol: float = 1e-10) -> dict:
    """Forward-evolve Gamma^T_gamma(z_+) for time T and measure the distance to the fiber over gamma.

    Every row uses the Duhamel integrator; rows whose T is in ``oracle_T``
    (default: the first T of the sweep) are also run through the explicit
    method-of-lines oracle, batched into one system per T.
    """
    zps = zplus_samples(setup, spec)
    dec, model, x, L = setup.dec, setup.model, setup.x, setup.ledger
    oracle_T = (spec.T_list[0],) if oracle_T is None else tuple(oracle_T)

    def fiber(u: LoopField, gi: int):
        g = setup.gamma(gi)
        d = dec.to_eig((u - g).real_coords())
        d_minus = d.copy()
        d_minus[dec.morse_index:] = 0.0
        return (float(ls.w12_norm_coords(dec.from_eig(d_minus), dec.J, dec.n)),
                ls.norm(u - g, ls.W12))

    def row(item):
        T, gi, zi = item
        r = {"T": float(T), "gamma_id": gi, "zplus_id": zi}
        try:
            P = _quiet_mixed(setup, T, gi, zps[zi])
            end = evolve(dec, model, x, P.xi0, T, grid=P.trajectory.grid).final
            r["minus_residual"], r["fiber_distance"] = fiber(end, gi)
            r["start"] = P.xi0
        except LoopflowError as exc:
            r["error"] = f"{type(exc).__name__}: {exc}"
        return r

    rows = _pmap(row, _grid(spec, setup), jobs)
    for T in oracle_T:
        sel = [r for r in rows if r["T"] == T and "start" in r]
        if not sel:
            continue
        trajs = evolve_oracle(model, x, [r["start"] for r in sel], T, t_eval=np.array([0.0, T]),
                              rtol=oracle_rtol)
        for r, tr in zip(sel, trajs):
            r["oracle_minus_residual"], r["oracle_fiber_distance"] = fiber(tr.final, r["gamma_id"])
            r["oracle_gap"] = abs(r["oracle_minus_residual"] - r["minus_residual"])
    for r in rows:
        r.pop("start", None)
    ok = [r for r in rows if "minus_residual" in r]
    orc = [r for r in ok if "oracle_gap" in r]
    checks = {
        "minus_residual_lt_1e-5": all(r["minus_residual"] < 1e-5 for r in ok),
        "fiber_distance_le_r": all(r["fiber_distance"] <= L.r for r in ok if r["T"] >= L.T1),
        "zero_rows_lt_1e-6": all(r["minus_residual"] < 1e-6 for r in ok if r["zplus_id"] == 0),
        "oracle_agreement_lt_1e-5": bool(orc) and all(r["oracle_gap"] < 1e-5 for r in orc),
        "oracle_minus_residual_lt_1e-5": all(r["oracle_minus_residual"] < 1e-5 for r in orc),
        "all_rows_ok": len(ok) == len(rows),
    }
    return {"rows": rows, "checks": checks, "r": L.r, "T1": L.T1, "oracle_T": list(oracle_T)}


def lipschitz_constant(setup: Setup) -> float:
    """Empirical analogue rho0*c1 of the Lipschitz bound of T -> xi^T."""
    lam1 = abs(float(setup.dec.eigenvalues[0])) if setup.dec.morse_index else 0.0
    c1 = 2.0 * (setup.ledger.c ** 2 * lam1 + 1.0)
    return setup.ledger.rho0 * c1


def lipschitz_in_T_audit(setup: Setup, T_values, taus=(0.1, 0.05, 0.025), gamma_id: int = 0,
                         zplus: LoopField | None = None, closed_form=None) -> dict:
    """Difference quotients ||Gamma^{T+tau} - Gamma^T||_{W12} / tau for shrinking tau.

    ``closed_form`` (optional) maps T to the exact Gamma^T_gamma(0) as a LoopField;
    its difference quotients are reported alongside.
    """
    dec = setup.dec
    zp = LoopField.zeros(dec.J, dec.n) if zplus is None else zplus
    bound = lipschitz_constant(setup)
    rows = []
    for T in T_values:
        G0 = _quiet_mixed(setup, T, gamma_id, zp).xi0
        qs = []
        for tau in taus:
            G1 = _quiet_mixed(setup, T + tau, gamma_id, zp).xi0
            q = ls.norm(G1 - G0, ls.W12) / tau
            r = {"T": float(T), "tau": float(tau), "quotient": q, "bound": bound}
            if closed_form is not None:
                qc = ls.norm(closed_form(T + tau) - closed_form(T), ls.W12) / tau
                r["closed_form_quotient"] = qc
                r["rel_err"] = abs(q - qc) / qc if qc > 0 else abs(q)
            rows.append(r)
            qs.append(q)
        if len(qs) >= 2:
            # Richardson extrapolation of the one-sided quotient to tau -> 0
            rows[-1]["richardson"] = 2 * qs[-1] - qs[-2]
    quotients = [r["quotient"] for r in rows]
    stabilizing = True
    for T in T_values:
        q = [r["quotient"] for r in rows if r["T"] == float(T)]
        steps = np.abs(np.diff(q))
        stabilizing &= bool(np.all(steps[1:] <= steps[:-1] + 1e-12))
    checks = {
        "bounded_by_rho0_c1": all(q <= bound for q in quotients),
        "stabilizing": stabilizing,
    }
    if closed_form is not None:
        checks["closed_form_rel_lt_1e-4"] = all(r["rel_err"] < 1e-4 for r in rows)
    return {"rows": rows, "bound": bound, "checks": checks}


def bilipschitz_audit(setup: Setup, spec: SweepSpec, T: float | None = None, gamma_id: int = 0) -> dict:
    """Ratios ||Gamma^T(z1) - Gamma^T(z2)|| / ||z1 - z2|| in W12 over all sample pairs."""
    T = spec.T_list[0] if T is None else T
    zps = zplus_samples(setup, spec)
    G = [_quiet_mixed(setup, T, gamma_id, zp).xi0 for zp in zps]
    rows = []
    for i in range(len(zps)):
        for j in range(i + 1, len(zps)):
            dz = ls.norm(zps[i] - zps[j], ls.W12)
            rows.append({"i": i, "j": j, "ratio": ls.norm(G[i] - G[j], ls.W12) / dz})
    lo, hi = 0.5, 2 * setup.c_hat
    return {"T": T, "rows": rows, "lower": lo, "upper": hi,
            "pass": all(lo <= r["ratio"] <= hi for r in rows)}


def linearization_fd_audit(setup: Setup, spec: SweepSpec, T: float | None = None, gamma_id: int = 0,
                           h: float = 1e-4) -> dict:
    """Relative error between X_v(0) and (Gamma^T(z_+ + h v) - Gamma^T(z_+))/h."""
    T = spec.T_list[0] if T is None else T
    zps = zplus_samples(setup, spec)
    vs = v_samples(setup, spec)
    dec, model, x, L, st = setup.dec, setup.model, setup.x, setup.ledger, setup.settings
    rows = []
    for zi, zp in enumerate(zps):
        P = _quiet_mixed(setup, T, gamma_id, zp)
        for vi, v in enumerate(vs):
            # step toward the origin when z_+ + h v would leave B^+
            sign = 1.0 if ls.norm(zp + v * h, ls.W12) <= L.zplus_radius else -1.0
            X = gm.linearized_graph(dec, model, x, L, T, setup.gamma(gamma_id), zp, v, st, point=P)
            P2 = _quiet_mixed(setup, T, gamma_id, zp + v * (sign * h))
            fd = (P2.xi0 - P.xi0) * (1.0 / (sign * h))
            rel = ls.norm(X - fd, ls.W12) / ls.norm(X, ls.W12)
            rows.append({"zplus_id": zi, "v_id": vi, "h": h, "rel_err": rel})
    return {"T": T, "rows": rows, "pass": all(r["rel_err"] < 1e-3 for r in rows)}


def write_rows_csv(rows: list, path) -> None:
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in keys])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_decay_file(result: SweepResult, path, value: str = "dist_W12") -> None:
    """Two-column (T, value) file, one block per group, blank line between blocks."""
    with open(path, "w") as fh:
        for key, (T, d) in _groups(result.rows, group_keys(result), value).items():
            fh.write(f"# {key}\n")
            for t, y in zip(T, d):
                fh.write(f"{t!r} {y!r}\n")
            fh.write("\n")


def group_keys(result: SweepResult):
    return ("gamma_id", "zplus_id", "v_id") if result.kind == "c1" else ("gamma_id", "zplus_id")
