"""Complex-valued analog-precoder network.

Three stages:

* sensing bank ``Phi`` (N x K x M, bias free, unconstrained): slot ``n``
  produces ``Phi[n] @ (H + V_n)``; slots are stacked into an NK x K matrix
  whose columns are the per-user inputs;
* a shared per-user MLP of P blocks ``ctanh(BN(W x + b))`` with complex
  batch normalisation that whitens (Re, Im) per feature;
* a merged linear head over the K concatenated user features producing
  ``vec(F_tilde)`` (column-major, M N_RF), followed by the constant-modulus
  map ``x / (|x| + eps) / sqrt(M)``.

Forward passes are written with :mod:`xlhbf.autodiff` ops so the same code
serves training (with gradients) and inference (plain constants).
"""

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from . import autodiff as ad
from .rng import complex_normal

MODES = ("indirect", "direct")


@dataclass
class NetworkParams:
    mode: str
    M: int
    K: int
    N_RF: int
    N: int
    dims: Tuple[int, ...]
    tensors: Dict[str, ad.Tensor] = field(default_factory=dict)
    bn_mean: Dict[int, np.ndarray] = field(default_factory=dict)
    bn_cov: Dict[int, np.ndarray] = field(default_factory=dict)
    eps_cm: float = 1e-12
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not (1 <= self.K <= self.N_RF <= self.M) or self.N < 1 or not self.dims:
            raise ValueError("invalid network dimensions")

    @property
    def P(self):
        return len(self.dims)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def arrays(self):
        return {k: t.value for k, t in self.tensors.items()}

    def n_real_params(self):
        return sum(t.value.size * (2 if t.is_complex else 1) for t in self.tensors.values())

    def copy(self):
        return NetworkParams(
            self.mode, self.M, self.K, self.N_RF, self.N, tuple(self.dims),
            {k: ad.Tensor(t.value.copy(), requires_grad=True, name=k) for k, t in self.tensors.items()},
            {p: v.copy() for p, v in self.bn_mean.items()},
            {p: v.copy() for p, v in self.bn_cov.items()},
            self.eps_cm, self.bn_eps, self.bn_momentum)

    def with_mode(self, mode):
        p = self.copy()
        p.mode = mode
        return p


def init_params(M, K, N_RF, N, dims, mode="indirect", rng=None, **kw):
    """Variance-preserving initialisation.

    Sensing kernels CN(0, 1/M); complex weights CN(0, 1/fan_in); biases 0;
    BN scale I/sqrt(2) and shift 0; running mean 0, running covariance I/2.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    dims = tuple(int(d) for d in dims)
    p = NetworkParams(mode, int(M), int(K), int(N_RF), int(N), dims, **kw)
    t = {"sensing": complex_normal(rng, (N, K, M), 1.0 / M)}
    fan_in = N * K
    for i, d in enumerate(dims, 1):
        t[f"block{i}.W"] = complex_normal(rng, (d, fan_in), 1.0 / fan_in)
        t[f"block{i}.b"] = np.zeros(d, dtype=np.complex128)
        t[f"block{i}.gamma"] = np.broadcast_to(np.eye(2) / np.sqrt(2), (d, 2, 2)).copy()
        t[f"block{i}.beta"] = np.zeros(d, dtype=np.complex128)
        p.bn_mean[i] = np.zeros(d, dtype=np.complex128)
        p.bn_cov[i] = np.broadcast_to(np.eye(2) / 2, (d, 2, 2)).copy()
        fan_in = d
    t["head.W"] = complex_normal(rng, (M * N_RF, K * dims[-1]), 1.0 / (K * dims[-1]))
    t["head.b"] = np.zeros(M * N_RF, dtype=np.complex128)
    p.tensors = {k: ad.Tensor(v, requires_grad=True, name=k) for k, v in t.items()}
    return p


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def measure(phi, H, noise=None):
    """Stacked sensing output ``[Phi_1 (H + V_1); ...; Phi_N (H + V_N)]``.

    ``phi`` (N, K, M); ``H`` (B, M, K); ``noise`` (B, N, M, K) or None.
    Returns (B, N K, K).
    """
    phi = ad.as_tensor(phi)
    H = ad.as_tensor(H)
    N, K, M = phi.shape
    if H.ndim != 3 or H.shape[1] != M:
        raise ValueError(f"channel shape {H.shape} does not match sensing bank {phi.shape}")
    X = ad.reshape(H, (H.shape[0], 1, M, H.shape[2]))
    if noise is not None:
        X = X + noise
    Y = ad.matmul(ad.reshape(phi, (1, N, K, M)), X)
    return ad.reshape(Y, (H.shape[0], N * K, H.shape[2]))


def sensing_forward(H, noise_sigma2, rng, params):
    """Sensing stage; fresh CN(0, noise_sigma2) noise per slot when ``noise_sigma2 > 0``."""
    H = np.asarray(H)
    single = H.ndim == 2
    Hb = H[None] if single else H
    noise = None
    if noise_sigma2 and noise_sigma2 > 0:
        noise = complex_normal(rng, (Hb.shape[0], params.N) + Hb.shape[1:], noise_sigma2)
    phi = params["sensing"] if isinstance(params, NetworkParams) else params
    Y = measure(phi, Hb, noise).value
    return Y[0] if single else Y


def ctanh(x):
    return ad.ctanh(x)


def complex_bn(x, params, p, training, update_stats=True):
    """Complex batch normalisation of block ``p`` on rows of ``x`` (R, D)."""
    gamma = params[f"block{p}.gamma"]
    beta = params[f"block{p}.beta"]
    eps = params.bn_eps
    if training:
        if x.shape[0] < 2:
            raise ValueError("complex batch norm needs at least 2 rows in training mode")
        xr, xi = ad.real(x), ad.imag(x)
        mr, mi = ad.mean(xr, axis=0), ad.mean(xi, axis=0)
        cr, ci = xr - mr, xi - mi
        vrr = ad.mean(cr * cr, axis=0)
        vii = ad.mean(ci * ci, axis=0)
        vri = ad.mean(cr * ci, axis=0)
        if update_stats:
            m = params.bn_momentum
            params.bn_mean[p] = (1 - m) * params.bn_mean[p] + m * (mr.value + 1j * mi.value)
            cov = np.stack([np.stack([vrr.value, vri.value], -1),
                            np.stack([vri.value, vii.value], -1)], -2)
            params.bn_cov[p] = (1 - m) * params.bn_cov[p] + m * cov
        wrr, wii, wri = ad.whiten2x2(vrr + eps, vii + eps, vri)
    else:
        mu = params.bn_mean[p]
        cov = params.bn_cov[p]
        cr = ad.real(x) - mu.real
        ci = ad.imag(x) - mu.imag
        wrr, wii, wri = ad.whiten2x2(ad.Tensor(cov[:, 0, 0] + eps), ad.Tensor(cov[:, 1, 1] + eps),
                                     ad.Tensor(cov[:, 0, 1]))
    zr = wrr * cr + wri * ci
    zi = wri * cr + wii * ci
    g = [[gamma[:, i, j] for j in range(2)] for i in range(2)]
    out_r = g[0][0] * zr + g[0][1] * zi + ad.real(beta)
    out_i = g[1][0] * zr + g[1][1] * zi + ad.imag(beta)
    return ad.complex_(out_r, out_i)


def mlp_forward(x, params, training=False, update_stats=True):
    """Shared MLP on per-user rows ``x`` (R, N K) -> (R, D_P)."""
    x = ad.as_tensor(x)
    if x.shape[-1] != params.N * params.K:
        raise ValueError(f"MLP input width {x.shape[-1]} != N K = {params.N * params.K}")
    for p in range(1, params.P + 1):
        h = ad.matmul(x, ad.transpose(params[f"block{p}.W"])) + params[f"block{p}.b"]
        x = ctanh(complex_bn(h, params, p, training, update_stats))
    return x


def cm_normalize(X, M, eps):
    """``X / (|X| + eps) / sqrt(M)``; exact zeros are first moved to 1 (phase 0)."""
    X = ad.as_tensor(X)
    zero = X.value == 0
    if np.any(zero):
        X = X + zero.astype(np.float64)
    return X / (ad.abs_(X) + eps) * (1.0 / np.sqrt(M))


def head_forward(features, params):
    """Merged head: (B, K, D_P) user features -> (B, M, N_RF) analog precoder."""
    features = ad.as_tensor(features)
    B = features.shape[0]
    z = ad.reshape(features, (B, params.K * params.dims[-1]))
    v = ad.matmul(z, ad.transpose(params["head.W"])) + params["head.b"]
    F = ad.transpose(ad.reshape(v, (B, params.N_RF, params.M)))
    return cm_normalize(F, params.M, params.eps_cm)


def user_rows(Y, K):
    """(B, N K, K) measurements -> (B K, N K) rows, user order preserved."""
    B, NK, _ = Y.shape
    return ad.reshape(ad.transpose(Y), (B * K, NK))


def features_from_measurements(Y, params, training=False, update_stats=True):
    Y = ad.as_tensor(Y)
    B = Y.shape[0]
    x = mlp_forward(user_rows(Y, params.K), params, training, update_stats)
    return ad.reshape(x, (B, params.K, params.dims[-1]))


def forward_from_measurements(Y, params, training=False, update_stats=True):
    Y = ad.as_tensor(Y)
    if Y.ndim != 3 or Y.shape[1:] != (params.N * params.K, params.K):
        raise ValueError(f"measurement shape {Y.shape} != (B, {params.N * params.K}, {params.K})")
    return head_forward(features_from_measurements(Y, params, training, update_stats), params)


def forward(x, params, training=False, rng=None, noise_sigma2=0.0, noise=None,
            update_stats=True):
    """Analog precoder from a channel (indirect mode, or any mode in training)
    or from stacked measurements (direct mode at inference).

    Returns a Tensor of shape (B, M, N_RF) (batch axis added for 2-D input).
    In training mode noise ``CN(0, noise_sigma2)`` is injected per slot, drawn
    from ``rng`` unless an explicit ``noise`` array (B, N, M, K) is given.
    """
    xv = x.value if isinstance(x, ad.Tensor) else np.asarray(x)
    if xv.ndim == 2:
        xv = xv[None]
        x = xv
    takes_channel = params.mode == "indirect" or training
    if takes_channel:
        if xv.shape[1:] != (params.M, params.K):
            raise ValueError(f"{params.mode} forward expects channels (B, {params.M}, {params.K}), "
                             f"got {xv.shape}")
        if training and noise is None and noise_sigma2 > 0:
            if rng is None:
                raise ValueError("training with noise needs an rng")
            noise = complex_normal(rng, (xv.shape[0], params.N) + xv.shape[1:], noise_sigma2)
        Y = measure(params["sensing"], x, noise if training else None)
    else:
        Y = x
    return forward_from_measurements(Y, params, training, update_stats)
