import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpvss import linalg
from lpvss.errors import NoConvergence, ShapeMismatch, SingularMatrix

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def square(n_max=6):
    return st.integers(1, n_max).flatmap(lambda n: arrays(np.float64, (n, n), elements=finite))


def test_as_matrix_promotes_vectors_and_rejects_nan():
    assert linalg.as_matrix([1, 2, 3]).shape == (3, 1)
    with pytest.raises(ValueError):
        linalg.as_matrix([[1.0, np.nan]])
    with pytest.raises(ShapeMismatch):
        linalg.as_matrix(np.zeros((2, 2, 2)))


@settings(max_examples=60, deadline=None)
@given(square())
def test_lu_reconstructs_permuted_input(a):
    a = a + 3 * a.shape[0] * np.eye(a.shape[0])  # keep it well conditioned
    f = linalg.lu_factor(a)
    assert sorted(f.perm.tolist()) == list(range(a.shape[0]))
    err = np.linalg.norm(a[f.perm] - f.L @ f.U) / np.linalg.norm(a)
    assert err < 1e-10


def test_lu_determinant_matches_numpy():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((5, 5))
    assert linalg.lu_factor(a).determinant() == pytest.approx(np.linalg.det(a), rel=1e-10)


def test_solve_against_numpy():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((6, 6)) + 4 * np.eye(6)
    b = rng.standard_normal((6, 3))
    np.testing.assert_allclose(linalg.solve(a, b), np.linalg.solve(a, b), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(linalg.solve(a, b[:, 0]), np.linalg.solve(a, b[:, 0]), rtol=1e-10)


def test_singular_matrix_raises():
    with pytest.raises(SingularMatrix):
        linalg.lu_factor([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrix):
        linalg.cayley(-np.eye(2))


@settings(max_examples=60, deadline=None)
@given(square())
def test_sym_eig_reconstructs_and_is_orthonormal(a):
    s = a + a.T
    e = linalg.sym_eig(s)
    v, w = e.eigenvectors, e.eigenvalues
    scale = max(np.linalg.norm(s), 1.0)
    assert np.linalg.norm(v @ np.diag(w) @ v.T - s) / scale < 1e-9
    assert np.max(np.abs(v.T @ v - np.eye(len(w)))) < 1e-9
    assert np.all(np.diff(w) >= 0)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(s), atol=1e-9 * scale)


def test_sym_eig_batched_matches_loop():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((4, 3, 5, 5))
    s = a + np.swapaxes(a, -1, -2)
    batched = linalg.sym_eig(s).eigenvalues
    for i in range(4):
        for j in range(3):
            np.testing.assert_allclose(batched[i, j], np.linalg.eigvalsh(s[i, j]), atol=1e-10)
    np.testing.assert_allclose(linalg.min_eigenvalue(s), batched[..., 0])


def test_sym_eig_sweep_budget_exhausted():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((8, 8))
    with pytest.raises(NoConvergence):
        linalg.sym_eig(a + a.T, max_sweeps=1)


def test_sym_eig_of_diagonal_and_1x1():
    e = linalg.sym_eig(np.diag([3.0, -1.0, 2.0]))
    np.testing.assert_array_equal(e.eigenvalues, [-1.0, 2.0, 3.0])
    assert linalg.sym_eig([[5.0]]).eigenvalues[0] == 5.0


@settings(max_examples=60, deadline=None)
@given(square())
def test_cayley_of_skew_is_orthogonal_with_det_one(a):
    s = a - a.T
    q = linalg.cayley(s)
    n = len(q)
    assert np.max(np.abs(q.T @ q - np.eye(n))) < 1e-9
    assert np.linalg.det(q) == pytest.approx(1.0, abs=1e-8)


def test_cayley_is_an_involution():
    rng = np.random.default_rng(4)
    m = rng.standard_normal((4, 4)) * 0.3
    np.testing.assert_allclose(linalg.cayley(linalg.cayley(m)), m, atol=1e-12)


def test_cayley_formula_commutes():
    rng = np.random.default_rng(5)
    m = rng.standard_normal((4, 4))
    eye = np.eye(4)
    ref = (eye - m) @ np.linalg.inv(eye + m)
    np.testing.assert_allclose(linalg.cayley(m), ref, atol=1e-12)
    np.testing.assert_allclose(linalg.cayley(m), np.linalg.inv(eye + m) @ (eye - m), atol=1e-12)


def test_spectral_radius_closed_forms():
    assert linalg.spectral_radius_upper(0.5 * np.eye(3)) == pytest.approx(0.5, rel=1e-12)
    rot = 0.9 * np.array([[np.cos(0.3), -np.sin(0.3)], [np.sin(0.3), np.cos(0.3)]])
    assert linalg.spectral_radius_upper(rot) == pytest.approx(0.9, rel=1e-6)
    assert linalg.spectral_radius_upper(np.array([[0.0, 1.0], [0.0, 0.0]])) == 0.0
    assert linalg.spectral_radius_upper(np.zeros((3, 3))) == 0.0


def test_spectral_radius_stack_matches_eigvals():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((50, 3, 3)) * 0.4
    ref = np.max(np.abs(np.linalg.eigvals(a)), axis=-1)
    np.testing.assert_allclose(linalg.spectral_radius_upper(a, iters=2000), ref, rtol=2e-2)
