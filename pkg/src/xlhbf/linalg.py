"""Dense complex linear algebra: Hermitian solves and eigendecomposition.

Inverses never appear explicitly anywhere in the package; every ``A^{-1} B``
goes through :func:`cholesky_solve`.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


class ContractViolation(ValueError):
    """Input does not satisfy an operation's preconditions."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    def __init__(self, pivot, sample=0):
        self.pivot = pivot
        self.sample = sample
        super().__init__(f"matrix not positive definite: pivot {pivot} failed (batch index {sample})")


class ConvergenceError(RuntimeError):
    def __init__(self, off_norm, sweeps):
        self.off_norm = off_norm
        self.sweeps = sweeps
        super().__init__(
            f"Jacobi eigensolver did not converge after {sweeps} sweeps "
            f"(off-diagonal norm {off_norm:.3e})")


@dataclass(frozen=True)
class HermitianSolveResult:
    """Solution of ``A X = B`` with the Cholesky factor of ``A`` kept."""
    x: np.ndarray
    factor: np.ndarray

    def solve(self, B):
        """Reuse the factor for another right-hand side."""
        B = np.asarray(B, dtype=np.complex128)
        Lb, Bb, shape = _as_batch(self.factor, B)
        return kernels.cho_solve(Lb, Bb).reshape(shape)


def _as_batch(A, B):
    batch = np.broadcast_shapes(A.shape[:-2], B.shape[:-2])
    n = A.shape[-1]
    if B.ndim < 2:
        raise ContractViolation("right-hand side must be a matrix; use B[..., None]")
    A = np.broadcast_to(A, batch + A.shape[-2:]).reshape(-1, n, n)
    out_shape = batch + B.shape[-2:]
    B = np.broadcast_to(B, out_shape).reshape(-1, n, B.shape[-1])
    return np.ascontiguousarray(A), np.ascontiguousarray(B), out_shape


def check_hermitian(A, tol=1e-10):
    A = np.asarray(A)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ContractViolation(f"expected square matrix, got shape {A.shape}")
    dev = np.abs(A - np.swapaxes(A.conj(), -1, -2)).max(initial=0.0)
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    if dev > tol * scale:
        raise ContractViolation(f"matrix is not Hermitian (max deviation {dev:.3e})")


REFINEMENT_STEPS = 2


def cholesky_solve(A, B, tol=1e-10, hermitian_tol=1e-10):
    """Solve ``A X = B`` for Hermitian positive definite ``A``.

    Both arguments may carry leading batch axes that broadcast against each
    other. The relative residual of every batch entry is checked against
    ``tol``; if it is exceeded, up to ``REFINEMENT_STEPS`` rounds of
    iterative refinement with the same factor are tried before giving up.
    ``tol=None`` skips the check (used inside autodiff).

    Raises
    ------
    ContractViolation
        ``A`` not square or not Hermitian within ``hermitian_tol``.
    NotPositiveDefiniteError
        A Cholesky pivot is not strictly positive; ``pivot`` and ``sample``
        identify where.
    """
    A = np.asarray(A, dtype=np.complex128)
    B = np.asarray(B, dtype=np.complex128)
    check_hermitian(A, hermitian_tol)
    if B.shape[-2] != A.shape[-1]:
        raise ContractViolation(f"shape mismatch: A {A.shape}, B {B.shape}")
    Ab, Bb, out_shape = _as_batch(A, B)
    L, bad_b, bad_j = kernels.cholesky(Ab)
    if bad_b >= 0:
        raise NotPositiveDefiniteError(bad_j, bad_b)
    X = kernels.cho_solve(L, Bb)
    if tol is not None:
        ref = np.linalg.norm(Bb, axis=(-2, -1))
        ref = np.where(ref > 0, ref, 1.0)
        for k in range(REFINEMENT_STEPS + 1):
            R = Bb - Ab @ X
            worst = np.max(np.linalg.norm(R, axis=(-2, -1)) / ref, initial=0.0)
            if worst < tol or k == REFINEMENT_STEPS:
                break
            X = X + kernels.cho_solve(L, R)
        if not worst < tol:
            raise np.linalg.LinAlgError(
                f"Hermitian solve residual {worst:.3e} exceeds tolerance {tol:.1e}")
    factor = L.reshape(np.broadcast_shapes(A.shape[:-2], B.shape[:-2]) + A.shape[-2:])
    return HermitianSolveResult(X.reshape(out_shape), factor)


def hermitian_eig(A, tol=1e-12, max_sweeps=100, hermitian_tol=1e-10):
    """Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with ``w`` ascending and ``A V = V diag(w)``.
    The sweep stops once the off-diagonal Frobenius norm falls below
    ``tol * ||A||_F``.
    """
    A = np.asarray(A, dtype=np.complex128)
    check_hermitian(A, hermitian_tol)
    if A.ndim != 2:
        raise ContractViolation("hermitian_eig takes a single matrix")
    A = 0.5 * (A + A.conj().T)
    w, V, sweeps, off = kernels.jacobi_eigh(np.ascontiguousarray(A), tol, max_sweeps)
    if sweeps < 0:
        raise ConvergenceError(off, max_sweeps)
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]
