import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xlhbf.linalg import (ContractViolation, ConvergenceError, NotPositiveDefiniteError,
                          check_hermitian, cholesky_solve, hermitian_eig)

from conftest import cplx


def test_identity_solve(rng):
    B = cplx(rng, 3, 2)
    assert np.allclose(cholesky_solve(np.eye(3), B).x, B, atol=0, rtol=1e-15)


def test_scalar_scaling():
    X = cholesky_solve(2 * np.eye(2), np.eye(2)).x
    assert np.allclose(X, 0.5 * np.eye(2), atol=1e-15)


def test_random_spd_residual(rng):
    G = cplx(rng, 4, 4)
    A = G.conj().T @ G + np.eye(4)
    B = cplx(rng, 4, 3)
    X = cholesky_solve(A, B).x
    assert np.linalg.norm(A @ X - B) / np.linalg.norm(B) < 1e-10


def test_factor_reuse(rng):
    G = cplx(rng, 5, 5)
    A = G.conj().T @ G + np.eye(5)
    r = cholesky_solve(A, cplx(rng, 5, 1))
    B2 = cplx(rng, 5, 2)
    assert np.allclose(r.solve(B2), np.linalg.solve(A, B2), rtol=1e-10, atol=1e-12)


def test_batched_broadcast(rng):
    G = cplx(rng, 4, 3, 3)
    A = G.conj().transpose(0, 2, 1) @ G + np.eye(3)
    B = cplx(rng, 3, 2)
    X = cholesky_solve(A, B).x
    assert X.shape == (4, 3, 2)
    for b in range(4):
        assert np.allclose(A[b] @ X[b], B, atol=1e-10)


def test_non_hermitian_rejected():
    with pytest.raises(ContractViolation):
        cholesky_solve(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(2))


def test_non_square_rejected():
    with pytest.raises(ContractViolation):
        check_hermitian(np.zeros((2, 3)))


def test_not_pd_reports_pivot():
    A = np.diag([1.0, -1.0, 2.0])
    with pytest.raises(NotPositiveDefiniteError) as e:
        cholesky_solve(A, np.eye(3))
    assert e.value.pivot == 1


def test_not_pd_reports_sample():
    A = np.stack([np.eye(2), np.diag([1.0, 0.0])])
    with pytest.raises(NotPositiveDefiniteError) as e:
        cholesky_solve(A, np.eye(2))
    assert e.value.sample == 1


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 64), delta=st.sampled_from([1e-6, 1e-3, 1.0]), seed=st.integers(0, 2**31))
def test_residual_bound_property(n, delta, seed):
    rng = np.random.default_rng(seed)
    G = cplx(rng, n, n)
    A = G.conj().T @ G + delta * np.eye(n)
    B = cplx(rng, n, 2)
    X = cholesky_solve(A, B).x
    assert np.linalg.norm(A @ X - B) / np.linalg.norm(B) < 1e-10


def test_eig_diag():
    w, V = hermitian_eig(np.diag([1.0, 3.0]))
    assert np.allclose(w, [1, 3])
    assert np.allclose(np.abs(V), np.eye(2))


def test_eig_pauli_y():
    w, _ = hermitian_eig(np.array([[0, -1j], [1j, 0]]))
    assert np.allclose(w, [-1, 1], atol=1e-14)


def test_eig_reconstruction(rng):
    G = cplx(rng, 5, 5)
    A = G + G.conj().T
    w, V = hermitian_eig(A)
    assert np.linalg.norm(V @ np.diag(w) @ V.conj().T - A) < 1e-9
    assert np.all(np.diff(w) >= 0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 32), seed=st.integers(0, 2**31))
def test_eig_properties(n, seed):
    rng = np.random.default_rng(seed)
    G = cplx(rng, n, n)
    A = G + G.conj().T
    w, V = hermitian_eig(A)
    assert np.isrealobj(w)
    assert np.linalg.norm(V.conj().T @ V - np.eye(n)) < 1e-9
    assert np.linalg.norm(V @ np.diag(w) @ V.conj().T - A) < 1e-9 * max(1.0, np.linalg.norm(A))


def test_eig_non_hermitian():
    with pytest.raises(ContractViolation):
        hermitian_eig(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_eig_convergence_error(rng):
    G = cplx(rng, 12, 12)
    with pytest.raises(ConvergenceError) as e:
        hermitian_eig(G + G.conj().T, max_sweeps=1)
    assert "off-diagonal" in str(e.value)
