"""Loops S^1 -> R^n as truncated Fourier series, collocation transforms and norms.

A field with truncation ``J`` lives on ``N = 2J + 1`` uniform nodes
``t_i = i/N``.  Besides the complex coefficients we use a real, L2-orthonormal
coordinate vector (per component: ``1, sqrt2 cos 2 pi j t, sqrt2 sin 2 pi j t``)
because every linear-algebra step downstream is done in it.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, GridError

DEFAULT_J = 32


def n_nodes(J: int) -> int:
    return 2 * J + 1


def nodes(J: int) -> np.ndarray:
    N = n_nodes(J)
    return np.arange(N) / N


@lru_cache(maxsize=32)
def _synthesis(J: int) -> np.ndarray:
    N = n_nodes(J)
    t = nodes(J)
    j = np.arange(1, J + 1)
    B = np.empty((N, N))
    B[:, 0] = 1.0
    B[:, 1:J + 1] = np.sqrt(2.0) * np.cos(2 * np.pi * np.outer(t, j))
    B[:, J + 1:] = np.sqrt(2.0) * np.sin(2 * np.pi * np.outer(t, j))
    B.setflags(write=False)
    return B


def synthesis_matrix(J: int) -> np.ndarray:
    """Grid values (N,) from real coordinates (N,) of one component."""
    return _synthesis(J)


def analysis_matrix(J: int) -> np.ndarray:
    # discrete orthogonality: B^T B = N * I for N = 2J+1
    return _synthesis(J).T / n_nodes(J)


def real_wavenumbers(J: int) -> np.ndarray:
    """Integer frequency of each real coordinate of one component."""
    j = np.arange(1, J + 1)
    return np.concatenate([[0], j, j])


def w12_weights(J: int, n: int = 1) -> np.ndarray:
    """Diagonal of the W^{1,2} Gram matrix in real coordinates, 1 + (2 pi j)^2."""
    k = real_wavenumbers(J)
    return np.tile(1.0 + (2 * np.pi * k) ** 2, n)


def coords_to_grid(c: np.ndarray, J: int, n: int) -> np.ndarray:
    """Real coordinates (..., n*N) -> grid values (..., N, n)."""
    N = n_nodes(J)
    c = np.asarray(c)
    blocks = c.reshape(c.shape[:-1] + (n, N))
    return np.swapaxes(blocks @ _synthesis(J).T, -1, -2)


def grid_to_coords(g: np.ndarray, J: int, n: int) -> np.ndarray:
    """Grid values (..., N, n) -> real coordinates (..., n*N)."""
    N = n_nodes(J)
    g = np.asarray(g)
    blocks = np.swapaxes(g, -1, -2) @ analysis_matrix(J).T
    return blocks.reshape(g.shape[:-2] + (n * N,))


def _real_to_complex(c: np.ndarray, J: int, n: int) -> np.ndarray:
    N = n_nodes(J)
    blocks = np.asarray(c, dtype=float).reshape(n, N)
    a0, a, b = blocks[:, 0], blocks[:, 1:J + 1], blocks[:, J + 1:]
    pos = (a - 1j * b) / np.sqrt(2.0)              # (n, J) for j = 1..J
    out = np.empty((N, n), dtype=complex)
    out[J] = a0
    out[J + 1:] = pos.T
    out[:J] = np.conj(pos.T[::-1])
    return out


def _complex_to_real(coeffs: np.ndarray, J: int, n: int) -> np.ndarray:
    pos = coeffs[J + 1:].T                          # (n, J)
    blocks = np.concatenate(
        [coeffs[J].real[:, None], np.sqrt(2.0) * pos.real, -np.sqrt(2.0) * pos.imag],
        axis=1,
    )
    return blocks.reshape(-1)


@dataclass(frozen=True)
class LoopField:
    """Real vector field along a loop, coefficients c[j+J, m] for |j| <= J."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or c.shape[0] % 2 != 1:
            raise DimensionError(f"coefficient array of shape {c.shape} is not (2J+1, n)")
        scale = max(1.0, float(np.abs(c).max(initial=0.0)))
        if np.abs(c - np.conj(c[::-1])).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("coefficients violate conjugate symmetry (field not real)")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def J(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def n(self) -> int:
        return self.coeffs.shape[1]

    def coef(self, j: int, m: int = 0) -> complex:
        return complex(self.coeffs[j + self.J, m])

    def real_coords(self) -> np.ndarray:
        return _complex_to_real(self.coeffs, self.J, self.n)

    @classmethod
    def from_real(cls, c, J: int, n: int = 1) -> "LoopField":
        c = np.asarray(c, dtype=float)
        if c.shape != (n * n_nodes(J),):
            raise DimensionError(f"expected {n * n_nodes(J)} real coordinates, got {c.shape}")
        return cls(_real_to_complex(c, J, n))

    @classmethod
    def zeros(cls, J: int = DEFAULT_J, n: int = 1) -> "LoopField":
        return cls(np.zeros((n_nodes(J), n), dtype=complex))

    @classmethod
    def constant(cls, value, J: int = DEFAULT_J) -> "LoopField":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        c = np.zeros((n_nodes(J), value.size), dtype=complex)
        c[J] = value
        return cls(c)

    @classmethod
    def harmonic(cls, j: int, amp: float = 1.0, kind: str = "cos", J: int = DEFAULT_J,
                 n: int = 1, component: int = 0) -> "LoopField":
        """amp * cos(2 pi j t) (or sin) in one component."""
        t = nodes(J)
        g = np.zeros((n_nodes(J), n))
        wave = np.cos if kind == "cos" else np.sin
        g[:, component] = amp * wave(2 * np.pi * j * t)
        return transform(GridField(g))

    def values(self) -> np.ndarray:
        return inverse(self).values

    def __add__(self, other: "LoopField") -> "LoopField":
        _check_compatible(self, other)
        return LoopField(self.coeffs + other.coeffs)

    def __sub__(self, other: "LoopField") -> "LoopField":
        _check_compatible(self, other)
        return LoopField(self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> "LoopField":
        return LoopField(self.coeffs * float(a))

    __rmul__ = __mul__

    def __neg__(self) -> "LoopField":
        return LoopField(-self.coeffs)


def _check_compatible(u: LoopField, v: LoopField):
    if u.coeffs.shape != v.coeffs.shape:
        raise DimensionError(f"incompatible fields {u.coeffs.shape} vs {v.coeffs.shape}")


@dataclass(frozen=True)
class GridField:
    """Values of shape (N, n) at the nodes t_i = i/N."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise DimensionError(f"grid values must be (N, n), got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def N(self) -> int:
        return self.values.shape[0]


def transform(field: GridField) -> LoopField:
    """Collocation values -> Fourier coefficients (requires odd N = 2J+1)."""
    N = field.N
    if N % 2 != 1:
        raise DimensionError(f"need an odd number of nodes N = 2J+1, got {N}")
    J = (N - 1) // 2
    c = np.fft.fft(field.values, axis=0) / N
    c = np.fft.fftshift(c, axes=0)
    # exact real-field symmetry (rounding in the FFT breaks it at 1e-17)
    c = 0.5 * (c + np.conj(c[::-1]))
    return LoopField(c)


def inverse(field: LoopField, N: int | None = None) -> GridField:
    expected = n_nodes(field.J)
    if N is not None and N != expected:
        raise DimensionError(f"grid size {N} does not match truncation J={field.J}")
    c = np.fft.ifftshift(field.coeffs, axes=0)
    return GridField(np.real(np.fft.ifft(c, axis=0)) * expected)


@dataclass(frozen=True)
class NormKind:
    tag: str
    p: float | None = None
    mu: float | None = None
    grid: tuple | None = None

    def __post_init__(self):
        if self.tag not in ("L1", "L2", "Lp", "W12", "Linf", "ExpT"):
            raise ValueError(f"unknown norm {self.tag!r}")
        if self.tag == "Lp" and (self.p is None or self.p < 1):
            raise ValueError("Lp norm needs p >= 1")
        if self.tag == "ExpT":
            g = np.asarray(self.grid, dtype=float)
            if g.ndim != 1 or g.size == 0 or np.any(np.diff(g) <= 0):
                raise GridError("ExpT needs a strictly increasing time grid")
            object.__setattr__(self, "grid", tuple(float(s) for s in g))


L1 = NormKind("L1")
L2 = NormKind("L2")
W12 = NormKind("W12")
Linf = NormKind("Linf")


def Lp(p: float) -> NormKind:
    return NormKind("Lp", p=float(p))


def ExpT(mu: float, grid) -> NormKind:
    """max_s e^{s mu/2} ||xi(s)||_{W12} over ``grid``."""
    return NormKind("ExpT", mu=float(mu), grid=tuple(grid))


def norm(field: LoopField, kind: NormKind = W12) -> float:
    if kind.tag == "L2":
        return float(np.sqrt(np.sum(np.abs(field.coeffs) ** 2)))
    if kind.tag == "W12":
        j = np.arange(-field.J, field.J + 1)
        w = 1.0 + (2 * np.pi * j) ** 2
        return float(np.sqrt(np.sum(w[:, None] * np.abs(field.coeffs) ** 2)))
    if kind.tag == "ExpT":
        raise ValueError("ExpT is a trajectory norm; use traj_norm")
    pointwise = np.linalg.norm(inverse(field).values, axis=1)
    if kind.tag == "Linf":
        return float(pointwise.max())
    p = 1.0 if kind.tag == "L1" else kind.p
    return float(np.mean(pointwise ** p) ** (1.0 / p))


def w12_norm_coords(c: np.ndarray, J: int, n: int = 1) -> np.ndarray:
    """W^{1,2} norm of real coordinate rows (..., n*N)."""
    return np.sqrt(np.sum(w12_weights(J, n) * np.asarray(c) ** 2, axis=-1))


def traj_norm(traj, weight: NormKind) -> float:
    """Weighted sup norm max_i e^{s_i mu/2} ||xi(s_i)||_{W12} of a trajectory."""
    if weight.tag != "ExpT":
        raise ValueError("traj_norm needs an ExpT weight")
    grid = np.asarray(traj.grid, dtype=float)
    wgrid = np.asarray(weight.grid)
    if grid.shape != wgrid.shape or not np.allclose(grid, wgrid, rtol=0, atol=1e-14):
        raise GridError("trajectory grid differs from the weight grid")
    vals = w12_norm_coords(traj.coords, traj.J, traj.n)
    return float(np.max(np.exp(grid * weight.mu / 2) * vals))
