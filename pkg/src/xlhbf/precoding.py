"""Closed-form hybrid precoding under the variant-MMSE criterion.

All functions accept single instances (``H`` is M x K) or batches with any
number of leading axes (``H`` is ... x M x K); outputs follow the inputs.
Matrix inverses are realised as Hermitian solves.

Notation: ``xi = K sigma2 / P_t`` is the active-power Lagrange multiplier.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .linalg import cholesky_solve, NotPositiveDefiniteError

JITTER = 1e-12


class ZeroEffectiveChannelError(ArithmeticError):
    """The power-normalisation factor is undefined (zero precoder output)."""

    def __init__(self, sample=0):
        self.sample = sample
        super().__init__(f"zero effective channel: beta undefined (batch index {sample})")


@dataclass(frozen=True)
class AnalogPrecoder:
    f_rf: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return self.f_rf if dtype is None else self.f_rf.astype(dtype)

    def cm_error(self):
        M = self.f_rf.shape[-2]
        return float(np.max(np.abs(np.abs(self.f_rf) * np.sqrt(M) - 1.0), initial=0.0))

    def check(self, tol=1e-9):
        if self.cm_error() > tol:
            raise ValueError(f"constant-modulus violation {self.cm_error():.3e}")
        return self


@dataclass(frozen=True)
class DigitalPrecoder:
    f_bb: np.ndarray
    beta: np.ndarray
    f_bb_unnormalized: np.ndarray


@dataclass(frozen=True)
class EffectiveChannel:
    h_eq: np.ndarray
    repetitions: int


@dataclass(frozen=True)
class ReferenceOptimizerConfig:
    n_iter: int = 500
    initial_step: float = 1.0
    backtrack_factor: float = 0.5
    max_backtracks: int = 40
    tol: float = 1e-10

    def __post_init__(self):
        if min(self.n_iter, self.initial_step, self.backtrack_factor, self.max_backtracks,
               self.tol) <= 0 or self.backtrack_factor >= 1:
            raise ValueError("reference optimizer settings must be positive (factor < 1)")


@dataclass
class ReferenceResult:
    f_rf: np.ndarray
    objective: np.ndarray
    history: np.ndarray = field(repr=False)
    iterations: np.ndarray = None


def herm(X):
    return np.swapaxes(X, -1, -2).conj()


def _sym(A):
    return 0.5 * (A + herm(A))


def _eye(n):
    return np.eye(n, dtype=np.complex128)


def gram(F):
    """``F^H F`` plus the relative diagonal jitter used by every Gram solve."""
    G = _sym(herm(F) @ F)
    n = G.shape[-1]
    tr = np.trace(G, axis1=-2, axis2=-1).real
    return G + (JITTER * tr / n)[..., None, None] * np.eye(n)


RANK_TOL = 1e-10


def check_full_rank(F):
    """Raise if ``F`` is numerically rank deficient.

    A squared Cholesky pivot of ``F^H F`` below ``RANK_TOL * tr / n`` counts
    as a zero pivot; the Gram jitter would otherwise hide exact rank loss.
    """
    G = gram(F)
    n = G.shape[-1]
    Gb = np.ascontiguousarray(G.reshape(-1, n, n))
    L, b, j = kernels.cholesky(Gb)
    if b >= 0:
        raise NotPositiveDefiniteError(j, b)
    piv = np.abs(np.diagonal(L, axis1=-2, axis2=-1)) ** 2
    scale = np.trace(Gb, axis1=-2, axis2=-1).real[:, None] / n
    bad = np.argwhere(piv < RANK_TOL * scale)
    if bad.size:
        raise NotPositiveDefiniteError(int(bad[0, 1]), int(bad[0, 0]))


def _beta(F, Ft, p_t):
    X = F @ Ft
    power = np.sum(np.abs(X) ** 2, axis=(-2, -1))
    flat = np.atleast_1d(power)
    zero = np.flatnonzero(~(flat > 0))
    if zero.size:
        raise ZeroEffectiveChannelError(int(zero[0]))
    return np.sqrt(p_t / power)


def kkt_digital(H, F_RF, p_t, sigma2, K=None):
    """Optimal digital precoder for a fixed analog precoder.

    ``F_BB_tilde = (F^H H H^H F + xi F^H F)^{-1} F^H H`` and ``beta`` activates
    the power constraint, ``||F_RF F_BB||_F^2 = p_t``.
    """
    H = np.asarray(H, dtype=np.complex128)
    F = np.asarray(F_RF, dtype=np.complex128)
    K = H.shape[-1] if K is None else K
    check_full_rank(F)
    xi = K * sigma2 / p_t
    Q = herm(F) @ H
    A = _sym(Q @ herm(Q)) + xi * gram(F)
    Ft = cholesky_solve(A, Q).x
    beta = _beta(F, Ft, p_t)
    return DigitalPrecoder(beta[..., None, None] * Ft, beta, Ft)


def sum_mse(H, F_RF, F_BB, beta, sigma2):
    """Sum-MSE between ``s`` and ``y / beta`` expanded through the trace."""
    H = np.asarray(H)
    F_RF = np.asarray(F_RF)
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(beta <= 0):
        raise ValueError("beta must be positive")
    K = H.shape[-1]
    G = herm(H) @ F_RF @ F_BB
    b = beta[..., None, None]
    M = _eye(K) - G / b - herm(G) / b + G @ herm(G) / b ** 2 + sigma2 / b ** 2 * _eye(K)
    return np.trace(M, axis1=-2, axis2=-1).real


def concentrated_mse(H, F_RF, p_t, sigma2, K=None):
    """Sum-MSE after eliminating ``(F_BB, beta)``, a function of ``F_RF`` alone.

    ``tr((I + P_t/(K sigma2) H^H F (F^H F)^{-1} F^H H)^{-1})`` with no
    semi-orthogonality approximation.
    """
    H = np.asarray(H, dtype=np.complex128)
    F = np.asarray(F_RF, dtype=np.complex128)
    K = H.shape[-1] if K is None else K
    Q = herm(F) @ H
    X = cholesky_solve(gram(F), Q).x
    S = _eye(H.shape[-1]) + (p_t / (K * sigma2)) * _sym(herm(Q) @ X)
    Z = cholesky_solve(S, np.broadcast_to(_eye(H.shape[-1]), S.shape)).x
    return np.trace(Z, axis1=-2, axis2=-1).real


def sinr_and_sum_rate(H, F_RF, F_BB, sigma2):
    """Per-user SINR (..., K) and sum rate in bps/Hz."""
    if sigma2 <= 0:
        raise ValueError("SINR needs sigma2 > 0")
    G = herm(np.asarray(H)) @ np.asarray(F_RF) @ np.asarray(F_BB)
    P = np.abs(G) ** 2
    sig = np.diagonal(P, axis1=-2, axis2=-1)
    interf = P.sum(axis=-1) - sig
    sinr = sig / (interf + sigma2)
    return sinr, np.sum(np.log2(1.0 + sinr), axis=-1)


def estimate_effective_channel(observations):
    """Average I repetition-block observations (each N_RF x K) and Hermitian-transpose."""
    obs = np.asarray(observations)
    if obs.ndim < 3 or obs.shape[0] == 0:
        raise ValueError("need at least one observation block")
    return EffectiveChannel(herm(obs.mean(axis=0)), obs.shape[0])


def digital_from_effective(H_eq, F_RF, p_t, sigma2, K=None, damping=0.0):
    """Digital precoder from an estimated effective channel ``H_eq = H^H F_RF``.

    ``(H_eq^H H_eq + xi F^H F + damping I)^{-1} H_eq^H`` then beta as for
    :func:`kkt_digital`. With the exact effective channel and zero damping
    the two coincide.
    """
    if isinstance(H_eq, EffectiveChannel):
        H_eq = H_eq.h_eq
    if damping < 0:
        raise ValueError("damping must be nonnegative")
    Hq = np.asarray(H_eq, dtype=np.complex128)
    F = np.asarray(F_RF, dtype=np.complex128)
    K = Hq.shape[-2] if K is None else K
    xi = K * sigma2 / p_t
    if damping == 0:
        check_full_rank(F)
    Q = herm(Hq)
    A = _sym(Q @ Hq) + xi * gram(F) + damping * np.eye(F.shape[-1])
    try:
        Ft = cholesky_solve(A, Q).x
    except NotPositiveDefiniteError as e:
        raise NotPositiveDefiniteError(e.pivot, e.sample) from ValueError(
            f"Gram matrix not positive definite with damping {damping}; increase damping")
    beta = _beta(F, Ft, p_t)
    return DigitalPrecoder(beta[..., None, None] * Ft, beta, Ft)


def fully_digital_mmse(H, p_t, sigma2, K=None):
    """Unconstrained MMSE precoder ``beta (H H^H + xi I)^{-1} H`` (M x K).

    Evaluated through the push-through identity ``H (H^H H + xi I)^{-1}``.
    Returned as a :class:`DigitalPrecoder` paired with an identity analog stage.
    """
    H = np.asarray(H, dtype=np.complex128)
    K = H.shape[-1] if K is None else K
    xi = K * sigma2 / p_t
    A = _sym(herm(H) @ H) + xi * _eye(H.shape[-1])
    Ft = H @ cholesky_solve(A, np.broadcast_to(_eye(H.shape[-1]), A.shape)).x
    flat = np.atleast_1d(np.sum(np.abs(Ft) ** 2, axis=(-2, -1)))
    zero = np.flatnonzero(~(flat > 0))
    if zero.size:
        raise ZeroEffectiveChannelError(int(zero[0]))
    beta = np.sqrt(p_t / np.sum(np.abs(Ft) ** 2, axis=(-2, -1)))
    return DigitalPrecoder(beta[..., None, None] * Ft, beta, Ft)


def fully_digital_mse(H, p_t, sigma2, K=None):
    """Concentrated sum-MSE of the fully digital solution, ``tr((I + H^H H / xi)^{-1})``."""
    H = np.asarray(H, dtype=np.complex128)
    K = H.shape[-1] if K is None else K
    S = _eye(H.shape[-1]) + (p_t / (K * sigma2)) * _sym(herm(H) @ H)
    Z = cholesky_solve(S, np.broadcast_to(_eye(H.shape[-1]), S.shape)).x
    return np.trace(Z, axis1=-2, axis2=-1).real


def project_cm(X):
    """Per-entry phase projection onto modulus ``1/sqrt(M)``; zeros map to phase 0."""
    M = X.shape[-2]
    mag = np.abs(X)
    unit = np.where(mag > 0, X / np.where(mag > 0, mag, 1.0), 1.0)
    return unit / np.sqrt(M)


def random_cm(rng, M, N_RF, batch=()):
    phase = rng.uniform(0.0, 2 * np.pi, tuple(batch) + (M, N_RF))
    return np.exp(1j * phase) / np.sqrt(M)


def concentrated_mse_grad(H, F, p_t, sigma2, K=None):
    """Objective and its conjugate cogradient ``dE/dRe F + j dE/dIm F``.

    With ``X = (F^H F)^{-1} F^H H`` and ``Z = (I + c H^H F X)^{-1}``:
    ``grad = -2c (I - P_F) H Z^2 X^H`` where ``P_F`` projects onto range(F).
    """
    K = H.shape[-1] if K is None else K
    c = p_t / (K * sigma2)
    Gm = gram(F)
    Q = herm(F) @ H
    Xs = cholesky_solve(Gm, Q, tol=None)
    X = Xs.x
    S = _eye(H.shape[-1]) + c * _sym(herm(Q) @ X)
    Z = cholesky_solve(S, np.broadcast_to(_eye(H.shape[-1]), S.shape), tol=None).x
    E = np.trace(Z, axis1=-2, axis2=-1).real
    Y = H @ (Z @ Z) @ herm(X)
    Y = Y - F @ Xs.solve(herm(F) @ Y)
    return E, -2.0 * c * Y


def projected_gradient_reference(H, config=None, scenario=None, rng=None, F0=None,
                                 p_t=None, sigma2=None):
    """Constant-modulus reference optimiser for the concentrated objective.

    Gradient step on ``F``, per-entry phase projection, accepted only if the
    objective strictly decreases; otherwise the step is shrunk by
    ``backtrack_factor`` up to ``max_backtracks`` times. The trial step of each
    iteration starts at twice the last accepted step, so the step adapts to
    the gradient scale (which shrinks like the objective squared). Instances
    in a batch run in lockstep but keep their own step sizes and stop
    individually once the relative decrease falls below ``tol`` or no step
    is accepted.
    """
    config = config or ReferenceOptimizerConfig()
    H = np.asarray(H, dtype=np.complex128)
    single = H.ndim == 2
    Hb = H[None] if single else H.reshape(-1, *H.shape[-2:])
    B, M, K = Hb.shape
    if scenario is not None:
        p_t = scenario.p_t if p_t is None else p_t
        sigma2 = scenario.sigma2 if sigma2 is None else sigma2
        n_rf = scenario.N_RF
    else:
        n_rf = None
    if F0 is None:
        if rng is None:
            raise ValueError("need rng or F0")
        F = random_cm(rng, M, n_rf if n_rf is not None else K, (B,))
    else:
        F = project_cm(np.asarray(F0, dtype=np.complex128).reshape(B, M, -1))
    E, grad = concentrated_mse_grad(Hb, F, p_t, sigma2, K)
    step = np.full(B, config.initial_step)
    active = np.ones(B, dtype=bool)
    history = np.empty((config.n_iter + 1, B))
    history[0] = E
    iters = np.zeros(B, dtype=int)
    for it in range(config.n_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            history[it + 1:] = E
            break
        mu = step[idx].copy()
        accepted = np.zeros(idx.size, dtype=bool)
        E_new = E[idx].copy()
        F_new = F[idx].copy()
        todo = np.arange(idx.size)
        for _ in range(config.max_backtracks):
            cand = project_cm(F[idx[todo]] - mu[todo, None, None] * grad[idx[todo]])
            Ec = concentrated_mse(Hb[idx[todo]], cand, p_t, sigma2, K)
            ok = Ec < E[idx[todo]]
            acc = todo[ok]
            accepted[acc] = True
            E_new[acc] = Ec[ok]
            F_new[acc] = cand[ok]
            todo = todo[~ok]
            if todo.size == 0:
                break
            mu[todo] *= config.backtrack_factor
        rel = (E[idx] - E_new) / E[idx]
        F[idx] = F_new
        E[idx] = E_new
        iters[idx[accepted]] += 1
        step[idx] = 2.0 * mu
        stop = ~accepted | (rel < config.tol)
        active[idx[stop]] = False
        upd = idx[accepted]
        if upd.size:
            _, g = concentrated_mse_grad(Hb[upd], F[upd], p_t, sigma2, K)
            grad[upd] = g
        history[it + 1] = E
    out_shape = H.shape[:-2]
    return ReferenceResult(F[0] if single else F.reshape(out_shape + F.shape[-2:]),
                           E[0] if single else E.reshape(out_shape),
                           history[:, 0] if single else history,
                           iters[0] if single else iters)
