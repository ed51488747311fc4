"""Interpretability probes: codebook correlation of learned beams and
complex PCA of the shared-MLP features."""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import network as nw
from .channel import array_response, codebook
from .linalg import hermitian_eig


@dataclass(frozen=True)
class BeamAnalysisSpec:
    theta_count: int = 181
    r_count: int = 71
    r_lo: float = 5.0
    r_hi: float = 40.0
    target: Tuple = ("sensing", 0, 0)

    def __post_init__(self):
        if self.theta_count < 2 or self.r_count < 2:
            raise ValueError("grid counts must be at least 2")
        if not 0 < self.r_lo < self.r_hi:
            raise ValueError("need 0 < r_lo < r_hi")
        if self.target[0] not in ("sensing", "frf", "vector"):
            raise ValueError(f"unknown beam target {self.target[0]!r}")

    @property
    def thetas(self):
        return np.linspace(-1.0, 1.0, self.theta_count)

    @property
    def rs(self):
        return np.linspace(self.r_lo, self.r_hi, self.r_count)


@dataclass
class BeamMap:
    thetas: np.ndarray
    rs: np.ndarray
    heatmap: np.ndarray
    marginal: np.ndarray

    def peak(self):
        i, j = np.unravel_index(np.argmax(self.heatmap), self.heatmap.shape)
        return self.thetas[i], self.rs[j]


def sensing_beam(params, n, i):
    """Beam of sensing kernel ``(n, i)``: its output is ``phi^T h``, so the
    array-domain beam is ``conj(phi)``."""
    phi = params["sensing"].value
    if not (0 <= n < phi.shape[0] and 0 <= i < phi.shape[1]):
        raise IndexError(f"sensing kernel ({n}, {i}) out of range {phi.shape[:2]}")
    return np.conj(phi[n, i])


def correlate(geometry, v, thetas, rs):
    v = np.asarray(v, dtype=np.complex128).ravel()
    if v.size != geometry.M:
        raise ValueError(f"target has length {v.size}, array has {geometry.M} elements")
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ValueError("target vector is zero")
    B = codebook(geometry, thetas, rs)
    return np.abs(np.conj(B) @ v) / nv


def analyze_beams(spec, geometry, v):
    """Heatmap ``|b(theta, r)^H v| / ||v||`` and its range marginal (mean over
    theta, scaled to peak 1)."""
    H = correlate(geometry, v, spec.thetas, spec.rs)
    marg = H.mean(axis=0)
    return BeamMap(spec.thetas, spec.rs, H, marg / marg.max())


def beam_target(spec, params, channel=None):
    kind = spec.target[0]
    if kind == "sensing":
        return sensing_beam(params, int(spec.target[1]), int(spec.target[2]))
    if kind == "frf":
        if channel is None:
            raise ValueError("an F_RF column target needs an input channel")
        if params.mode == "indirect":
            F = nw.forward(channel, params).value[0]
        else:
            F = nw.forward(nw.measure(params["sensing"], np.asarray(channel)[None]).value,
                           params).value[0]
        return F[:, int(spec.target[1])]
    return np.asarray(spec.target[1])


@dataclass
class PCAResult:
    explained: np.ndarray
    components: np.ndarray
    projections: np.ndarray
    mean: np.ndarray

    @property
    def pc1(self):
        return self.projections[:, 0]

    @property
    def pc2_magnitude(self):
        return np.abs(self.projections[:, 1]) if self.projections.shape[1] > 1 \
            else np.zeros(len(self.projections))


def complex_pca(Z):
    """PCA of complex rows via the Hermitian sample covariance.

    Eigenvalues are sorted descending; explained ratios are clipped at 0
    and normalised to sum to 1.
    """
    Z = np.asarray(Z, dtype=np.complex128)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise ValueError("complex PCA needs at least 2 samples")
    mu = Z.mean(axis=0)
    Zc = Z - mu
    C = Zc.conj().T @ Zc / Z.shape[0]
    w, V = hermitian_eig(0.5 * (C + C.conj().T))
    w, V = w[::-1], V[:, ::-1]
    w = np.clip(w, 0.0, None)
    total = w.sum()
    explained = w / total if total > 0 else np.full_like(w, 1.0 / len(w))
    return PCAResult(explained, V, Zc @ V, mu)


def probe_channels(geometry, rs, theta=0.0):
    """Single-path unit-gain probes ``sqrt(M) b(theta, r)``, shape (len(rs), M).

    The common phase ``exp(-j 2 pi r / lambda)`` is left out so the sweep
    isolates the wavefront curvature.
    """
    out = np.empty((len(rs), geometry.M), dtype=np.complex128)
    for i, r in enumerate(rs):
        out[i] = np.sqrt(geometry.M) * array_response(geometry, theta, r)[:, 0]
    return out


def user_features(params, h):
    """Shared-MLP features (S, D_P) for single-user channel vectors ``h`` (S, M)."""
    h = np.asarray(h, dtype=np.complex128)
    phi = params["sensing"].value.reshape(params.N * params.K, params.M)
    rows = h @ phi.T
    return nw.mlp_forward(rows, params, training=False).value


def feature_pca(params, geometry, rs, theta=0.0):
    rs = np.asarray(rs, dtype=np.float64)
    if rs.size < 2:
        raise ValueError("need at least 2 probe samples")
    return complex_pca(user_features(params, probe_channels(geometry, rs, theta)))


def max_phase_jump(z):
    """Largest absolute phase increment between consecutive complex values."""
    d = np.angle(z[1:] * np.conj(z[:-1]))
    return float(np.max(np.abs(d))) if d.size else 0.0
