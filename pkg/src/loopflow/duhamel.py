"""Exact per-eigenmode convolution kernels for piecewise-linear forcing.

All solvers (forward integration, stable/unstable/mixed contractions and their
linearizations) share these weights, so their quadrature errors are consistent.
Forcing values g are interpolated linearly between grid nodes and integrated
exactly against e^{-rate (s - sigma)}.
"""
from __future__ import annotations

import numpy as np

from . import loopspace as ls
from .model import _grid_dnonlinearity, _grid_nonlinearity, hess_potential

_SMALL = 1e-2


def phi1(x):
    """(e^x - 1)/x, stable near 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SMALL
    safe = np.where(small, 1.0, x)
    series = 1 + x / 2 + x ** 2 / 6 + x ** 3 / 24 + x ** 4 / 120
    return np.where(small, series, np.expm1(safe) / safe)


def phi2(x):
    """(e^x - 1 - x)/x^2, stable near 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SMALL
    safe = np.where(small, 1.0, x)
    series = 0.5 + x / 6 + x ** 2 / 24 + x ** 3 / 120 + x ** 4 / 720
    return np.where(small, series, (np.expm1(safe) - safe) / safe ** 2)


def step_weights(rate: np.ndarray, h: np.ndarray):
    """Weights for I(s+h) = decay I(s) + w_old g(s) + w_new g(s+h).

    ``rate`` has shape (D,), ``h`` shape (M-1,); outputs have shape (M-1, D).
    """
    z = -np.outer(h, rate)
    with np.errstate(over="ignore"):
        decay = np.exp(z)
    p1, p2 = phi1(z), phi2(z)
    hh = h[:, None]
    return decay, hh * (p1 - p2), hh * p2


def forward(weights, g: np.ndarray, init: np.ndarray | None = None) -> np.ndarray:
    """I(s_m) = int_{s_0}^{s_m} e^{-rate (s_m - sigma)} g(sigma) dsigma (+ e^{...} init)."""
    decay, w_old, w_new = weights
    local = w_old * g[:-1] + w_new * g[1:]
    out = np.empty_like(g)
    out[0] = 0.0 if init is None else init
    for m in range(len(local)):
        out[m + 1] = decay[m] * out[m] + local[m]
    return out


def backward(weights, g: np.ndarray) -> np.ndarray:
    """I(s_m) = int_{s_m}^{s_M} e^{-rate (sigma - s_m)} g(sigma) dsigma.

    ``weights`` must be built with the (positive) backward rate.
    """
    decay, w_old, w_new = weights
    # mirrored interval: the node nearer s_m carries the w_new weight
    local = w_new * g[:-1] + w_old * g[1:]
    out = np.empty_like(g)
    out[-1] = 0.0
    for m in range(len(local) - 1, -1, -1):
        out[m] = decay[m] * out[m + 1] + local[m]
    return out


class LocalFlow:
    """Chart dynamics d/ds zeta + A zeta = f(zeta) expressed in eigen coordinates."""

    def __init__(self, dec, model, x):
        self.dec = dec
        self.model = model
        self.J, self.n = dec.J, dec.n
        self.lam = np.asarray(dec.eigenvalues)
        self.Q = np.asarray(dec.basis)
        self.k = dec.morse_index
        self.plus = dec.plus_mask
        self.t = ls.nodes(self.J)
        self.xgrid = ls.coords_to_grid(x.x.real_coords(), self.J, self.n)
        self.hess_x = hess_potential(model, self.t, self.xgrid)
        sq = np.sqrt(ls.w12_weights(self.J, self.n))
        self._w12 = (sq[:, None] * self.Q).T          # rows: eigen -> weighted real coords

    @classmethod
    def of(cls, dec, model, x) -> "LocalFlow":
        key = ("flow", id(model), id(x))
        flow = dec._cache.get(key)
        if flow is None:
            flow = dec._cache[key] = cls(dec, model, x)
        return flow

    def to_grid(self, W: np.ndarray) -> np.ndarray:
        return ls.coords_to_grid(W @ self.Q.T, self.J, self.n)

    def from_grid(self, G: np.ndarray) -> np.ndarray:
        return ls.grid_to_coords(G, self.J, self.n) @ self.Q

    def f(self, W: np.ndarray) -> np.ndarray:
        G = _grid_nonlinearity(self.model, self.xgrid, self.to_grid(W), self.t, self.hess_x)
        return self.from_grid(G)

    def df(self, W: np.ndarray, V: np.ndarray) -> np.ndarray:
        G = _grid_dnonlinearity(self.model, self.xgrid, self.to_grid(W), self.to_grid(V), self.t,
                                self.hess_x)
        return self.from_grid(G)

    def w12(self, W: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(W) @ self._w12, axis=-1)

    def l2(self, W: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(W), axis=-1)

    def to_coords(self, W: np.ndarray) -> np.ndarray:
        return np.asarray(W) @ self.Q.T

    def to_eig(self, C: np.ndarray) -> np.ndarray:
        return np.asarray(C) @ self.Q
