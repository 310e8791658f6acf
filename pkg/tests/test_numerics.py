import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hyperred.numerics import lq, nnls_lawson_hanson, pseudoinverse, qr_column_pivoted, thin_svd

from oracles import nnls_brute_force

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_svd_identity():
    U, s, V = thin_svd(np.eye(3))
    np.testing.assert_allclose(s, [1, 1, 1])
    np.testing.assert_allclose(np.abs(U), np.eye(3), atol=1e-14)
    np.testing.assert_allclose(np.abs(V), np.eye(3), atol=1e-14)


def test_svd_diagonal():
    _, s, _ = thin_svd(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(s, [3, 1])


def test_svd_rejects_nonfinite():
    with pytest.raises(ValueError, match="non-finite"):
        thin_svd(np.array([[1.0, np.nan]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_svd_reconstruction_and_orthonormality(m, n, seed):
    A = np.random.default_rng(seed).standard_normal((m, n))
    U, s, V = thin_svd(A)
    k = min(m, n)
    assert U.shape == (m, k) and V.shape == (n, k)
    assert np.linalg.norm(A - U @ np.diag(s) @ V.T) <= 1e-12 * np.linalg.norm(A) * 10
    np.testing.assert_allclose(U.T @ U, np.eye(k), atol=1e-12)
    np.testing.assert_allclose(V.T @ V, np.eye(k), atol=1e-12)
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)


def test_pinv_examples():
    np.testing.assert_allclose(pseudoinverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))
    np.testing.assert_array_equal(pseudoinverse(np.zeros((2, 2))), np.zeros((2, 2)))


@settings(max_examples=30, deadline=None)
@given(arrays(float, (5, 3), elements=finite))
def test_pinv_penrose(A):
    if np.linalg.matrix_rank(A) < 3 or np.linalg.cond(A) > 1e6:
        return
    P = pseudoinverse(A)
    np.testing.assert_allclose(P @ A, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(A @ P @ A, A, atol=1e-10 * np.abs(A).max())
    np.testing.assert_allclose(P @ A @ P, P, atol=1e-10 * np.abs(P).max())
    np.testing.assert_allclose((A @ P).T, A @ P, atol=1e-10)
    np.testing.assert_allclose(pseudoinverse(P), A, atol=1e-8 * np.abs(A).max())


def test_qr_pivot_choice_and_rank():
    _, R, piv = qr_column_pivoted(np.array([[0.0, 2.0], [1.0, 0.0]]))
    assert piv[0] == 1
    _, R, _ = qr_column_pivoted(np.eye(2))
    np.testing.assert_allclose(np.abs(R), np.eye(2))
    v = np.array([1.0, 2.0, 3.0])
    _, R, _ = qr_column_pivoted(np.outer(v, [1.0, -2.0, 0.5]))
    assert abs(R[1, 1]) <= 1e-12 and abs(R[2, 2]) <= 1e-12


def test_qr_factorization_property():
    A = np.random.default_rng(3).standard_normal((7, 5))
    Q, R, piv = qr_column_pivoted(A)
    np.testing.assert_allclose(Q @ R, A[:, piv], atol=1e-12)
    assert np.all(np.diff(np.abs(np.diag(R))) <= 1e-12)


def test_lq_examples():
    res = lq(np.array([[2.0, 0.0], [0.0, 3.0]]))
    np.testing.assert_allclose(np.abs(res.L), np.diag([2, 3]))
    np.testing.assert_allclose(np.abs(res.Q), np.eye(2))
    Q0 = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 3)))[0].T
    np.testing.assert_allclose(np.abs(lq(Q0).L), np.eye(3), atol=1e-12)


def test_lq_random_and_dependent_rows():
    A = np.random.default_rng(1).standard_normal((4, 10))
    res = lq(A)
    assert np.linalg.norm(A - res.L @ res.Q) <= 1e-12 * np.linalg.norm(A) * 10
    np.testing.assert_allclose(res.Q @ res.Q.T, np.eye(4), atol=1e-12)
    assert np.allclose(res.L, np.tril(res.L))
    B = np.vstack([A, A[0] + A[2]])
    res = lq(B)
    assert res.dropped == 1 and res.L.shape == (4, 4)


def test_nnls_examples():
    r = nnls_lawson_hanson(np.eye(2), np.array([2.0, 3.0]))
    np.testing.assert_allclose(r.x, [2, 3])
    assert r.residual == pytest.approx(0, abs=1e-14)
    r = nnls_lawson_hanson(np.array([[1.0]]), np.array([-1.0]))
    assert r.x[0] == 0 and r.residual == pytest.approx(1.0)
    r = nnls_lawson_hanson(np.array([[1.0, 1.0]]), np.array([1.0]))
    np.testing.assert_allclose(r.x, [1, 0])


def test_nnls_rejects_bad_input():
    with pytest.raises(ValueError):
        nnls_lawson_hanson(np.eye(2), np.ones(3))
    with pytest.raises(ValueError):
        nnls_lawson_hanson(np.eye(2), np.ones(2), tol=0)


def test_nnls_point_cap_and_iteration_cap():
    rng = np.random.default_rng(5)
    A = rng.random((20, 30))
    b = A @ rng.random(30)
    r = nnls_lawson_hanson(A, b, tol=1e-14, max_points=3)
    assert r.status == "capped" and np.count_nonzero(r.x) <= 3 and np.all(r.x >= 0)
    r = nnls_lawson_hanson(A, b, tol=1e-14, max_iter=2)
    assert r.status == "max_iter" and not r.converged and np.all(r.x >= 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_nnls_matches_enumeration(m, n, seed):
    rng = np.random.default_rng(seed)
    A, b = rng.standard_normal((m, n)), rng.standard_normal(m)
    res = nnls_lawson_hanson(A, b, tol=1e-12)
    _, best = nnls_brute_force(A, b)
    assert np.all(res.x >= 0)
    assert res.residual <= best + 1e-8
