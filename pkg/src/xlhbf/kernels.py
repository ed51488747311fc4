"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The public names at the bottom pick one flavour according to
:data:`xlhbf._accel.USE_NUMBA`. Both flavours are importable under their
explicit ``*_numba`` / ``*_numpy`` names so tests and the benchmark can
compare them.

Batched arrays put the batch axis first: ``A[b, i, j]``.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit


# ---------------------------------------------------------------------------
# Batched Cholesky factorisation  A = L L^H
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def cholesky_numba(A):
    nb, n, _ = A.shape
    L = np.zeros_like(A)
    for b in range(nb):
        for j in range(n):
            s = A[b, j, j].real
            for k in range(j):
                s -= L[b, j, k].real ** 2 + L[b, j, k].imag ** 2
            if not (s > 0.0):
                return L, b, j
            d = math.sqrt(s)
            L[b, j, j] = d
            for i in range(j + 1, n):
                t = A[b, i, j]
                for k in range(j):
                    t -= L[b, i, k] * np.conj(L[b, j, k])
                L[b, i, j] = t / d
    return L, -1, -1


def cholesky_numpy(A):
    nb, n, _ = A.shape
    L = np.zeros_like(A)
    for j in range(n):
        row = L[:, j, :j]
        s = A[:, j, j].real - np.sum(row.real ** 2 + row.imag ** 2, axis=1)
        bad = ~(s > 0.0)
        if bad.any():
            return L, int(np.flatnonzero(bad)[0]), j
        d = np.sqrt(s)
        L[:, j, j] = d
        if j + 1 < n:
            t = A[:, j + 1:, j] - np.einsum("bik,bk->bi", L[:, j + 1:, :j], row.conj())
            L[:, j + 1:, j] = t / d[:, None]
    return L, -1, -1


@njit(cache=True, nogil=True)
def cho_solve_numba(L, B):
    nb, n, nr = B.shape
    X = B.copy()
    for b in range(nb):
        for c in range(nr):
            for i in range(n):
                t = X[b, i, c]
                for k in range(i):
                    t -= L[b, i, k] * X[b, k, c]
                X[b, i, c] = t / L[b, i, i].real
            for i in range(n - 1, -1, -1):
                t = X[b, i, c]
                for k in range(i + 1, n):
                    t -= np.conj(L[b, k, i]) * X[b, k, c]
                X[b, i, c] = t / L[b, i, i].real
    return X


def cho_solve_numpy(L, B):
    n = B.shape[1]
    X = np.array(B, dtype=np.result_type(L, B), copy=True)
    diag = L[:, np.arange(n), np.arange(n)].real
    for i in range(n):
        if i:
            X[:, i, :] -= np.einsum("bk,bkc->bc", L[:, i, :i], X[:, :i, :])
        X[:, i, :] /= diag[:, i, None]
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            X[:, i, :] -= np.einsum("bk,bkc->bc", L[:, i + 1:, i].conj(), X[:, i + 1:, :])
        X[:, i, :] /= diag[:, i, None]
    return X


# ---------------------------------------------------------------------------
# Cyclic complex Jacobi eigensolver for one Hermitian matrix
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def jacobi_eigh_numba(A, tol, max_sweeps):
    n = A.shape[0]
    A = A.copy()
    V = np.eye(n, dtype=np.complex128)
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale += A[i, j].real ** 2 + A[i, j].imag ** 2
    scale = math.sqrt(scale)
    off = 0.0
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += A[i, j].real ** 2 + A[i, j].imag ** 2
        off = math.sqrt(off)
        if off <= tol * scale or scale == 0.0:
            w = np.empty(n)
            for i in range(n):
                w[i] = A[i, i].real
            return w, V, sweep, off
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                mag = abs(apq)
                if mag == 0.0:
                    continue
                ph = np.conj(apq / mag)
                tau = (A[q, q].real - A[p, p].real) / (2.0 * mag)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                j00 = c + 0j
                j01 = s + 0j
                j10 = -s * ph
                j11 = c * ph
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = akp * j00 + akq * j10
                    A[k, q] = akp * j01 + akq * j11
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = vkp * j00 + vkq * j10
                    V[k, q] = vkp * j01 + vkq * j11
                for k in range(n):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = np.conj(j00) * apk + np.conj(j10) * aqk
                    A[q, k] = np.conj(j01) * apk + np.conj(j11) * aqk
                A[p, q] = 0.0
                A[q, p] = 0.0
                A[p, p] = A[p, p].real
                A[q, q] = A[q, q].real
    w = np.empty(n)
    for i in range(n):
        w[i] = A[i, i].real
    return w, V, -1, off


def jacobi_eigh_numpy(A, tol, max_sweeps):
    n = A.shape[0]
    A = np.array(A, dtype=np.complex128, copy=True)
    V = np.eye(n, dtype=np.complex128)
    scale = np.linalg.norm(A)
    off_mask = ~np.eye(n, dtype=bool)
    off = 0.0
    for sweep in range(max_sweeps + 1):
        off = float(np.sqrt(np.sum(np.abs(A[off_mask]) ** 2)))
        if off <= tol * scale or scale == 0.0:
            return A.diagonal().real.copy(), V, sweep, off
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                mag = abs(apq)
                if mag == 0.0:
                    continue
                ph = np.conj(apq / mag)
                tau = (A[q, q].real - A[p, p].real) / (2.0 * mag)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                J = np.array([[c, s], [-s * ph, c * ph]])
                idx = [p, q]
                A[:, idx] = A[:, idx] @ J
                V[:, idx] = V[:, idx] @ J
                A[idx, :] = J.conj().T @ A[idx, :]
                A[p, q] = A[q, p] = 0.0
                A[p, p] = A[p, p].real
                A[q, q] = A[q, q].real
    return A.diagonal().real.copy(), V, -1, off


# ---------------------------------------------------------------------------
# Spherical-wave path delays and channel synthesis
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def path_delays_numba(positions, directions, r):
    """Return ``dist(element_m, source) - r`` for sources at ``r * directions``.

    ``positions`` is (M, 3), ``directions`` (P, 3) unit vectors, ``r`` (P,).
    Uses ``(|p|^2 - 2 r p.u) / (r_m + r)`` which avoids cancellation when r
    is many wavelengths.
    """
    M = positions.shape[0]
    P = directions.shape[0]
    out = np.empty((P, M))
    for i in range(P):
        ri = r[i]
        for m in range(M):
            pp = 0.0
            pu = 0.0
            for a in range(3):
                pp += positions[m, a] * positions[m, a]
                pu += positions[m, a] * directions[i, a]
            num = pp - 2.0 * ri * pu
            rm = math.sqrt(ri * ri + num)
            out[i, m] = num / (rm + ri)
    return out


def path_delays_numpy(positions, directions, r):
    pp = np.sum(positions * positions, axis=1)
    pu = directions @ positions.T
    num = pp[None, :] - 2.0 * r[:, None] * pu
    rm = np.sqrt(r[:, None] ** 2 + num)
    return num / (rm + r[:, None])


@njit(cache=True, nogil=True)
def synthesize_numba(delays, alpha, r, wavelength, n_paths):
    """Sum paths into channel vectors.

    ``delays`` (P, M) from :func:`path_delays_numba`, ``alpha`` and ``r`` (P,),
    consecutive groups of ``n_paths`` rows form one channel vector.
    Returns (P // n_paths, M).
    """
    P, M = delays.shape
    G = P // n_paths
    out = np.zeros((G, M), dtype=np.complex128)
    k = 2.0 * math.pi / wavelength
    amp = math.sqrt(M / n_paths) / math.sqrt(M)
    for g in range(G):
        for l in range(n_paths):
            i = g * n_paths + l
            a = alpha[i] * np.exp(-1j * k * r[i]) * amp
            for m in range(M):
                out[g, m] += a * np.exp(-1j * k * delays[i, m])
    return out


def synthesize_numpy(delays, alpha, r, wavelength, n_paths):
    P, M = delays.shape
    k = 2.0 * np.pi / wavelength
    amp = np.sqrt(M / n_paths) / np.sqrt(M)
    a = alpha * np.exp(-1j * k * r) * amp
    terms = a[:, None] * np.exp(-1j * k * delays)
    out = np.zeros((P // n_paths, M), dtype=np.complex128)
    for l in range(n_paths):
        out += terms[l::n_paths]
    return out


# ---------------------------------------------------------------------------
# Fused Adam update on flat float64 views (in place)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def adam_update_numba(p, g, m, v, lr, beta1, beta2, eps, b1c, b2c):
    for i in range(p.size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi / b1c) / (math.sqrt(vi / b2c) + eps)


def adam_update_numpy(p, g, m, v, lr, beta1, beta2, eps, b1c, b2c):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * (m / b1c) / (np.sqrt(v / b2c) + eps)


if USE_NUMBA:
    cholesky = cholesky_numba
    cho_solve = cho_solve_numba
    jacobi_eigh = jacobi_eigh_numba
    path_delays = path_delays_numba
    synthesize = synthesize_numba
    adam_update = adam_update_numba
else:
    cholesky = cholesky_numpy
    cho_solve = cho_solve_numpy
    jacobi_eigh = jacobi_eigh_numpy
    path_delays = path_delays_numpy
    synthesize = synthesize_numpy
    adam_update = adam_update_numpy
