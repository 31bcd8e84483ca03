import numpy as np
import pytest

from loopflow import loopspace as ls
from loopflow import model as mdl
from loopflow import spectral
from loopflow.errors import DegenerateCriticalPoint
from loopflow.loopspace import LoopField


def test_pendulum_diagonal(crit, pendulum):
    op = spectral.assemble(pendulum, crit)
    j = ls.real_wavenumbers(32)
    assert np.allclose(np.diag(op.matrix), (2 * np.pi * j) ** 2 - 1, atol=1e-9)
    off = op.matrix - np.diag(np.diag(op.matrix))
    assert np.max(np.abs(off)) < 1e-12


def test_free_operator_is_laplacian():
    free = mdl.free_model()
    x = mdl.find_critical_loop(free, LoopField.constant(0.0, 8))
    op = spectral.assemble(free, x)
    j = ls.real_wavenumbers(8)
    assert np.allclose(op.matrix, np.diag((2 * np.pi * j) ** 2), atol=1e-12)
    with pytest.raises(DegenerateCriticalPoint):
        spectral.decompose(op)


def test_pendulum_spectrum(dec):
    lam = dec.eigenvalues
    assert lam[0] == pytest.approx(-1.0, abs=1e-10)
    assert lam[1] == pytest.approx(4 * np.pi ** 2 - 1, abs=1e-8)
    assert lam[2] == pytest.approx(4 * np.pi ** 2 - 1, abs=1e-8)
    assert dec.morse_index == 1
    assert dec.gap == pytest.approx(1.0, abs=1e-10)
    assert dec.mu == pytest.approx(0.5, abs=1e-10)
    j = np.sort(ls.real_wavenumbers(32))
    assert np.max(np.abs(lam - ((2 * np.pi * j) ** 2 - 1))) < 1e-8


def test_torus_product_index_two():
    m = mdl.torus_product()
    x = mdl.find_critical_loop(m, LoopField.constant([3.0, 3.1], 16))
    dec = spectral.decompose(spectral.assemble(m, x))
    assert dec.morse_index == 2
    assert sorted(dec.eigenvalues[:2]) == pytest.approx([-1.0, -0.8], abs=1e-10)
    assert dec.gap == pytest.approx(0.8, abs=1e-10)


def test_eigenvectors_orthonormal(dec):
    Q = dec.basis
    assert np.max(np.abs(Q.T @ Q - np.eye(dec.dim))) < 1e-10


def test_projection_examples(dec):
    one = LoopField.constant(1.0)
    assert ls.norm(spectral.project(dec, one, "minus") - one, ls.Linf) < 1e-12
    assert ls.norm(spectral.project(dec, LoopField.harmonic(1, 1.0), "minus"), ls.Linf) < 1e-12


def test_resolution_of_identity(dec, rng):
    z = LoopField.from_real(rng.standard_normal(dec.dim), 32)
    p, m = spectral.project(dec, z, "plus"), spectral.project(dec, z, "minus")
    assert ls.norm(p + m - z, ls.Linf) < 1e-12
    Pp, Pm = dec.projector("plus"), dec.projector("minus")
    assert np.max(np.abs(Pp @ Pm)) < 1e-12
    assert np.max(np.abs(Pp @ Pp - Pp)) < 1e-12


def test_operator_commutes_with_projections(dec, rng):
    A = dec.op.matrix
    z = rng.standard_normal(dec.dim)
    for part in ("plus", "minus"):
        P = dec.projector(part)
        assert np.linalg.norm(A @ (P @ z) - P @ (A @ z)) < 1e-10 * np.linalg.norm(A @ z)


def test_minus_eigenvectors_band_limited(dec):
    v = dec.eigenvector(0)
    j = ls.real_wavenumbers(32)
    w32 = (1 + (2 * np.pi * j) ** 2) ** 3
    assert np.isfinite(np.sqrt(np.sum(w32 * v.real_coords() ** 2)))


def test_eigen_sign_convention_deterministic(crit, pendulum):
    a = spectral.decompose(spectral.assemble(pendulum, crit))
    b = spectral.decompose(spectral.assemble(pendulum, crit))
    assert np.array_equal(a.basis, b.basis)
    assert a.eigenvector(0).coef(0).real > 0
