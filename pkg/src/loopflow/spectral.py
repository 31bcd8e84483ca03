"""Jacobi operator at a critical loop, its spectrum and the spectral splitting."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import loopspace as ls
from .errors import DegenerateCriticalPoint
from .loopspace import LoopField
from .model import CriticalLoop, TorusModel, _hess_block, _stiffness_diag


@dataclass(frozen=True)
class JacobiOperator:
    """Galerkin matrix of xi -> -xi'' - HessV_t(x(t)) xi in real L2-orthonormal coordinates."""

    x: CriticalLoop
    matrix: np.ndarray
    model: TorusModel

    @property
    def J(self) -> int:
        return self.x.x.J

    @property
    def n(self) -> int:
        return self.x.x.n

    def apply(self, field: LoopField) -> LoopField:
        return LoopField.from_real(self.matrix @ field.real_coords(), self.J, self.n)


def assemble(model: TorusModel, x: CriticalLoop) -> JacobiOperator:
    J, n = x.x.J, x.x.n
    xgrid = ls.coords_to_grid(x.x.real_coords(), J, n)
    M = np.diag(_stiffness_diag(J, n)) - _hess_block(model, xgrid, J)
    M = 0.5 * (M + M.T)
    M.setflags(write=False)
    return JacobiOperator(x=x, matrix=M, model=model)


@dataclass(frozen=True)
class SpectralDecomposition:
    op: JacobiOperator
    eigenvalues: np.ndarray          # ascending
    basis: np.ndarray                # columns: eigenvectors in real coordinates
    morse_index: int
    gap: float
    mu: float
    degeneracy_tol: float = 1e-8
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def J(self) -> int:
        return self.op.J

    @property
    def n(self) -> int:
        return self.op.n

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @property
    def minus(self) -> np.ndarray:
        return np.arange(self.morse_index)

    @property
    def plus(self) -> np.ndarray:
        return np.arange(self.morse_index, self.dim)

    @cached_property
    def plus_mask(self) -> np.ndarray:
        m = np.zeros(self.dim, dtype=bool)
        m[self.morse_index:] = True
        return m

    def eigenvector(self, i: int) -> LoopField:
        return LoopField.from_real(self.basis[:, i], self.J, self.n)

    @property
    def eigenvectors(self) -> list[LoopField]:
        return [self.eigenvector(i) for i in range(self.dim)]

    def projector(self, part: str) -> np.ndarray:
        idx = _part_index(self, part)
        Q = self.basis[:, idx]
        return Q @ Q.T

    def to_eig(self, c: np.ndarray) -> np.ndarray:
        """Real coordinates (..., D) -> eigen coordinates."""
        return np.asarray(c) @ self.basis

    def from_eig(self, w: np.ndarray) -> np.ndarray:
        return np.asarray(w) @ self.basis.T


def _part_index(dec: SpectralDecomposition, part: str) -> np.ndarray:
    if part == "minus":
        return dec.minus
    if part == "plus":
        return dec.plus
    if part == "full":
        return np.arange(dec.dim)
    raise ValueError(f"part must be plus, minus or full, got {part!r}")


def decompose(op: JacobiOperator, mu_fraction: float = 0.5,
              degeneracy_tol: float = 1e-8) -> SpectralDecomposition:
    if not 0.0 < mu_fraction < 1.0:
        raise ValueError("mu_fraction must lie in (0, 1)")
    lam, Q = np.linalg.eigh(op.matrix)
    order = np.argsort(lam, kind="stable")
    lam, Q = lam[order], Q[:, order]
    # deterministic sign: largest-magnitude entry positive
    piv = np.argmax(np.abs(Q) > (1 - 1e-9) * np.abs(Q).max(axis=0), axis=0)
    Q = Q * np.sign(Q[piv, np.arange(Q.shape[1])])
    nearest = float(np.min(np.abs(lam)))
    if nearest < degeneracy_tol:
        raise DegenerateCriticalPoint(
            f"Jacobi operator has eigenvalue {lam[np.argmin(np.abs(lam))]:.3e} within {degeneracy_tol:g} of 0")
    k = int(np.sum(lam < 0))
    neg = -lam[k - 1] if k > 0 else np.inf
    pos = lam[k] if k < lam.size else np.inf
    d = float(min(neg, pos))
    lam.setflags(write=False)
    Q.setflags(write=False)
    return SpectralDecomposition(op=op, eigenvalues=lam, basis=Q, morse_index=k, gap=d,
                                 mu=mu_fraction * d, degeneracy_tol=degeneracy_tol)


def project(dec: SpectralDecomposition, field: LoopField, part: str) -> LoopField:
    """L2-orthogonal projection onto the negative ("minus") or positive ("plus") eigenspaces."""
    c = field.real_coords()
    return LoopField.from_real(dec.projector(part) @ c, dec.J, dec.n)


def spectral_summary(dec: SpectralDecomposition, count: int = 8) -> dict:
    return {
        "morse_index": dec.morse_index,
        "gap": dec.gap,
        "mu": dec.mu,
        "eigenvalues": [float(v) for v in dec.eigenvalues[:count]],
        "dimension": dec.dim,
    }
