"""The linear semigroup e^{-sA}, its subspace parts and empirical decay/smoothing constants."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import loopspace as ls
from .errors import NegativeTimeOnPlus
from .loopspace import L1, L2, W12, LoopField, NormKind
from .spectral import SpectralDecomposition, _part_index


@dataclass(frozen=True)
class SemigroupQuery:
    s: float
    part: str = "full"

    def __post_init__(self):
        if self.part not in ("full", "plus", "minus"):
            raise ValueError(f"unknown part {self.part!r}")
        if self.s < 0 and self.part != "minus":
            raise NegativeTimeOnPlus(f"e^(-sA) on part {self.part!r} is only defined for s >= 0 (s={self.s})")


def _multipliers(dec: SpectralDecomposition, s: float, part: str) -> np.ndarray:
    SemigroupQuery(s, part)
    mult = np.zeros(dec.dim)
    idx = _part_index(dec, part)
    mult[idx] = np.exp(-s * dec.eigenvalues[idx])
    return mult


def apply(dec: SpectralDecomposition, q: SemigroupQuery, zeta: LoopField) -> LoopField:
    w = dec.to_eig(zeta.real_coords())
    return LoopField.from_real(dec.from_eig(_multipliers(dec, q.s, q.part) * w), dec.J, dec.n)


def semigroup_matrix(dec: SpectralDecomposition, s: float, part: str) -> np.ndarray:
    """Matrix of e^{-sA} pi_part acting on real coordinates."""
    Q = dec.basis
    return (Q * _multipliers(dec, s, part)) @ Q.T


def _target_weight(dec: SpectralDecomposition, kind: NormKind) -> np.ndarray:
    if kind.tag == "L2":
        return np.ones(dec.dim)
    if kind.tag == "W12":
        return np.sqrt(ls.w12_weights(dec.J, dec.n))
    raise ValueError(f"unsupported target norm {kind.tag}")


def operator_norm(dec: SpectralDecomposition, s: float, part: str, src: NormKind = L2,
                  dst: NormKind = L2) -> float:
    """Induced norm of e^{-sA} pi_part between the discretized spaces.

    From L1 the unit ball of the rectangle-rule norm is the convex hull of
    node spikes of height N, so the norm is the largest spike response.
    """
    M = _target_weight(dec, dst)[:, None] * semigroup_matrix(dec, s, part)
    if src.tag == "L2":
        return float(np.linalg.norm(M, 2))
    if src.tag == "W12":
        return float(np.linalg.norm(M / np.sqrt(ls.w12_weights(dec.J, dec.n))[None, :], 2))
    if src.tag == "L1":
        J, n = dec.J, dec.n
        N = ls.n_nodes(J)
        Bt = ls.synthesis_matrix(J).T          # column i = coordinates of the spike at node i
        best = 0.0
        for i in range(N):
            R = np.zeros((dec.dim, n))
            for m in range(n):
                R[:, m] = M[:, m * N:(m + 1) * N] @ Bt[:, i]
            best = max(best, float(np.linalg.norm(R, 2)))
        return best
    raise ValueError(f"unsupported source norm {src.tag}")


def _weighted(s: float, opnorm: float, alpha: float, mu: float, part: str) -> float:
    if part == "minus" and s <= 0:
        return float(np.exp(-s * mu) * opnorm)
    return float(abs(s) ** alpha * np.exp(s * mu) * opnorm)


def audit_smoothing(dec: SpectralDecomposition, s_grid, alpha: float = 0.75, mu: float | None = None,
                    part: str = "plus", src: NormKind = L1, dst: NormKind = W12,
                    jobs: int = 1, refine_levels: int = 3) -> dict:
    """Empirical constant sup_s s^alpha e^{s mu} ||e^{-sA} pi_part||_{src->dst}.

    For part="minus" and s <= 0 the weight is e^{-s mu} instead.  The grid is
    also extended toward s = 0 by ``refine_levels`` halvings; a constant that
    keeps growing there (more than 10%) is flagged as not refinement-stable.
    """
    mu = dec.mu if mu is None else mu
    s_grid = np.asarray(s_grid, dtype=float)
    if part != "minus" and np.any(s_grid <= 0):
        raise ValueError("smoothing audit needs s > 0 for the plus/full part")

    def row(s):
        op = operator_norm(dec, s, part, src, dst)
        return float(s), op, _weighted(s, op, alpha, mu, part)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        rows = list(pool.map(row, s_grid))
    c_hat = max(r[2] for r in rows)
    if part != "minus" and refine_levels > 0:
        s0 = s_grid.min()
        extra = [row(s0 / 2 ** i) for i in range(1, refine_levels + 1)]
        c_ref = max(c_hat, max(r[2] for r in extra))
    else:
        c_ref = c_hat
    growth = c_ref / c_hat - 1.0 if c_hat > 0 else 0.0
    return {
        "c_hat": c_hat,
        "c_hat_refined": c_ref,
        "refinement_growth": growth,
        "refinement_stable": bool(growth <= 0.1),
        "alpha": alpha,
        "mu": mu,
        "part": part,
        "src": src.tag,
        "dst": dst.tag,
        "J": dec.J,
        "rows": [{"s": s, "opnorm": op, "weighted_value": wv} for s, op, wv in rows],
    }


def semigroup_constant(dec: SpectralDecomposition, mu: float | None = None, s_min: float = 1e-3,
                       s_max: float = 10.0, points: int = 120) -> dict:
    """Audit-measured constant c >= 1 covering the norm pairs used by the solvers."""
    mu = dec.mu if mu is None else mu
    s_pos = np.geomspace(s_min, s_max, points)
    pairs = {
        "L1->W12": (L1, W12, 0.75),
        "L2->W12": (L2, W12, 0.5),
        "L2->L2": (L2, L2, 0.0),
        "W12->W12": (W12, W12, 0.0),
    }
    out = {}
    for name, (src, dst, alpha) in pairs.items():
        rep = audit_smoothing(dec, s_pos, alpha, mu, "plus", src, dst, refine_levels=0)
        # s = 0 is part of the closed range for the non-singular pairs
        at0 = operator_norm(dec, 0.0, "plus", src, dst) if alpha == 0 else 0.0
        out[name] = max(rep["c_hat"], at0)
    if dec.morse_index > 0:
        s_neg = -np.linspace(0.0, s_max, points)
        for name, (src, dst) in {"minus W12": (W12, W12), "minus L1->W12": (L1, W12)}.items():
            out[name] = audit_smoothing(dec, s_neg, 0.0, mu, "minus", src, dst, refine_levels=0)["c_hat"]
    c = max(1.0, *out.values())
    return {"c": c, "per_pair": out, "mu": mu}


def write_audit_csv(report: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "opnorm", "weighted_value"])
        for r in report["rows"]:
            w.writerow([repr(r["s"]), repr(r["opnorm"]), repr(r["weighted_value"])])
