import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iim_poisson.errors import SingularMatrixError
from iim_poisson.linalg import hessenberg_eigs, lsq_solve_pivoted, lu_factor, lu_solve, qr_pivoted


def test_lsq_orthogonal(rng):
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    b = rng.normal(size=(6, 3))
    x, rank = lsq_solve_pivoted(q, b)
    assert rank == 6
    assert np.allclose(x, q.T @ b, atol=1e-12)


def test_lsq_vandermonde_fit(rng):
    t = np.linspace(-1, 1, 30)
    coef = np.array([0.5, -2.0, 1.0, 3.0])
    a = np.vander(t, 4, increasing=True)
    b = a @ coef
    x, rank = lsq_solve_pivoted(a, b)
    assert rank == 4
    assert np.abs(a @ x - b).max() <= 1e-10
    assert np.allclose(x, coef)


def test_lsq_duplicate_column(rng):
    a = rng.normal(size=(10, 4))
    a[:, 3] = a[:, 1]
    _, rank = lsq_solve_pivoted(a, rng.normal(size=10))
    assert rank == 3


def test_lsq_matches_numpy(rng):
    a = rng.normal(size=(20, 7))
    b = rng.normal(size=20)
    x, _ = lsq_solve_pivoted(a, b)
    assert np.allclose(x, np.linalg.lstsq(a, b, rcond=None)[0], atol=1e-12)


def test_row_functional(rng):
    a = rng.normal(size=(15, 5))
    f = qr_pivoted(a)
    v = rng.normal(size=5)
    c = f.row_functional(v)
    b = rng.normal(size=15)
    assert v @ f.solve(b) == pytest.approx(c @ b, abs=1e-12)


def test_qr_needs_tall():
    with pytest.raises(ValueError):
        qr_pivoted(np.ones((2, 3)))


def test_lu_small():
    assert np.allclose(lu_solve(np.eye(4), np.arange(4.0)), np.arange(4.0))
    assert np.allclose(lu_solve(np.array([[2.0, 1.0], [1.0, 3.0]]), np.array([3.0, 4.0])), [1.0, 1.0])


def test_lu_diagonally_dominant(rng):
    a = rng.normal(size=(50, 50))
    a += np.diag(np.abs(a).sum(axis=1) + 1)
    b = rng.normal(size=50)
    x = lu_solve(a, b)
    norm_a = np.abs(a).sum(axis=1).max()
    assert np.abs(a @ x - b).max() <= 1e-10 * norm_a * np.abs(x).max()


def test_lu_singular():
    with pytest.raises(SingularMatrixError):
        lu_factor(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_lu_deterministic(rng):
    a = rng.normal(size=(12, 12))
    f1, f2 = lu_factor(a), lu_factor(a)
    assert np.array_equal(f1.lu, f2.lu) and np.array_equal(f1.piv, f2.piv)


def test_eigs_diagonal():
    d = np.array([3.0, -1.0, 2.5, 7.0])
    assert np.allclose(np.sort(hessenberg_eigs(np.diag(d)).real), np.sort(d))


def test_eigs_rotation_block():
    h = np.array([[1.0, -2.0], [3.0, 1.0]])
    # lambda^2 - 2 lambda + 7 = 0
    ev = np.sort_complex(hessenberg_eigs(h))
    assert np.allclose(ev, np.sort_complex(np.array([1 - 1j * np.sqrt(6), 1 + 1j * np.sqrt(6)])), atol=1e-12)


def test_eigs_companion():
    # (x-1)(x-2)(x-3) = x^3 - 6x^2 + 11x - 6
    h = np.array([[6.0, -11.0, 6.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    ev = np.sort(hessenberg_eigs(h).real)
    assert np.allclose(ev, [1, 2, 3], atol=1e-8)
    assert np.abs(hessenberg_eigs(h).imag).max() <= 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**32 - 1))
def test_eigs_random_hessenberg(m, seed):
    h = np.triu(np.random.default_rng(seed).normal(size=(m, m)), -1)
    ours = np.sort_complex(hessenberg_eigs(h))
    ref = np.sort_complex(np.linalg.eigvals(h))
    # match as multisets via the characteristic polynomial residual
    for lam in ours:
        smin = np.linalg.svd(h - lam * np.eye(m), compute_uv=False)[-1]
        assert smin <= 1e-8 * max(1.0, np.abs(h).max())
    assert np.allclose(np.sort(ours.real), np.sort(ref.real), atol=1e-6)
