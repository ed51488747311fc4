"""Array geometry, spherical-wave responses and multiuser channel generation.

Angles are carried as sines in [-1, 1] throughout (no degrees). A ULA lies
on the y axis with element ``m`` at ``delta_m * d``,
``delta_m = (2m - M + 1) / 2``; a source with angle parameter ``s`` at
distance ``r`` sits at ``r * (sqrt(1 - s^2), s, 0)``, which reproduces
``r_m = sqrt(r^2 + delta_m^2 d^2 - 2 r delta_m d s)``. A UPA lies in the
y-z plane and takes an (azimuth sine, elevation sine) pair.
"""

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from . import kernels
from .rng import complex_normal, substream

SPEED_OF_LIGHT = 3e8


@dataclass(frozen=True)
class ArrayGeometry:
    kind: str
    m_y: int
    m_z: int
    wavelength: float
    spacing: float

    @classmethod
    def ula(cls, M, wavelength, spacing=None):
        return cls("ULA", int(M), 1, float(wavelength),
                   float(wavelength / 2 if spacing is None else spacing))

    @classmethod
    def upa(cls, m_y, m_z, wavelength, spacing=None):
        return cls("UPA", int(m_y), int(m_z), float(wavelength),
                   float(wavelength / 2 if spacing is None else spacing))

    def __post_init__(self):
        if self.kind not in ("ULA", "UPA"):
            raise ValueError(f"unknown array kind {self.kind!r}")
        if self.kind == "ULA" and self.m_z != 1:
            raise ValueError("a ULA has m_z == 1")
        if self.m_y < 1 or self.m_z < 1 or self.spacing <= 0 or self.wavelength <= 0:
            raise ValueError("invalid array geometry")

    @property
    def M(self):
        return self.m_y * self.m_z

    @property
    def positions(self):
        """Element coordinates (M, 3) in meters; y is the fast index."""
        y = (2 * np.arange(self.m_y) - self.m_y + 1) / 2 * self.spacing
        z = (2 * np.arange(self.m_z) - self.m_z + 1) / 2 * self.spacing
        zz, yy = np.meshgrid(z, y, indexing="ij")
        pos = np.zeros((self.M, 3))
        pos[:, 1] = yy.ravel()
        pos[:, 2] = zz.ravel()
        return pos

    @property
    def aperture(self):
        return self.spacing * np.hypot(self.m_y - 1, self.m_z - 1)

    def directions(self, theta):
        """Unit vectors toward sources with angle parameters ``theta``.

        ULA: ``theta`` has shape (...). UPA: shape (..., 2) holding
        (azimuth sine, elevation sine).
        """
        theta = np.asarray(theta, dtype=np.float64)
        if self.kind == "ULA":
            if np.any(np.abs(theta) > 1):
                raise ValueError("ULA angle parameter must lie in [-1, 1]")
            return np.stack([np.sqrt(1 - theta ** 2), theta, np.zeros_like(theta)], axis=-1)
        if theta.shape[-1:] != (2,):
            raise ValueError("UPA angle parameter is an (azimuth sine, elevation sine) pair")
        if np.any(np.abs(theta) > 1):
            raise ValueError("UPA angle parameters must lie in [-1, 1]")
        su, sv = theta[..., 0], theta[..., 1]
        cv = np.sqrt(1 - sv ** 2)
        return np.stack([cv * np.sqrt(1 - su ** 2), cv * su, sv], axis=-1)


def ula_distances(M, spacing, theta, r):
    """Closed-form element-to-source distances for a ULA."""
    delta = (2 * np.arange(M) - M + 1) / 2
    return np.sqrt(r ** 2 + (delta * spacing) ** 2 - 2 * r * delta * spacing * theta)


def path_delays(geometry, theta, r):
    """``r_m - r`` for every element, shape (P, M) for P sources."""
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    if np.any(r <= 0):
        raise ValueError("distance must be positive")
    dirs = geometry.directions(theta).reshape(-1, 3)
    return kernels.path_delays(np.ascontiguousarray(geometry.positions),
                               np.ascontiguousarray(dirs), r.reshape(-1))


def array_response(geometry, theta, r):
    """Near-field array response ``b(theta, r)`` as an (M, 1) column, unit norm."""
    d = path_delays(geometry, np.asarray(theta)[None] if geometry.kind == "UPA" else [theta], [r])
    b = np.exp(-2j * np.pi / geometry.wavelength * d[0]) / np.sqrt(geometry.M)
    return b[:, None]


def codebook(geometry, thetas, rs):
    """Responses on a (theta, r) grid, shape (len(thetas), len(rs), M)."""
    thetas = np.asarray(thetas, dtype=np.float64)
    rs = np.asarray(rs, dtype=np.float64)
    T, R = np.meshgrid(thetas, rs, indexing="ij")
    d = path_delays(geometry, T.ravel(), R.ravel())
    b = np.exp(-2j * np.pi / geometry.wavelength * d) / np.sqrt(geometry.M)
    return b.reshape(len(thetas), len(rs), geometry.M)


def planar_response(geometry, theta):
    """Far-field (first-order) ULA steering vector ``exp(+j 2 pi/lambda delta_m d theta) / sqrt(M)``."""
    delta = (2 * np.arange(geometry.M) - geometry.M + 1) / 2
    return np.exp(2j * np.pi / geometry.wavelength * delta * geometry.spacing * theta)[:, None] \
        / np.sqrt(geometry.M)


def rayleigh_distance(geometry):
    return 2 * geometry.aperture ** 2 / geometry.wavelength


@dataclass(frozen=True)
class PathParams:
    alpha: complex
    theta: object
    r: float

    def __post_init__(self):
        if np.any(np.abs(np.asarray(self.theta)) > 1) or self.r <= 0:
            raise ValueError("path parameters out of range")


@dataclass(frozen=True)
class ScenarioConfig:
    M: int = 128
    K: int = 4
    N_RF: int = 4
    L: int = 4
    f_c: float = 100e9
    r_min: float = 5.0
    r_max: float = 80.0
    snr_db: float = 10.0
    p_t: float = 1.0
    geometry: str = "ULA"
    upa_shape: Optional[Tuple[int, int]] = None
    seed: int = 0

    def __post_init__(self):
        if self.geometry == "UPA":
            if self.upa_shape is None or self.upa_shape[0] * self.upa_shape[1] != self.M:
                raise ValueError("UPA needs upa_shape with m_y * m_z == M")
        elif self.geometry != "ULA":
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if not (1 <= self.K <= self.N_RF <= self.M):
            raise ValueError("need K <= N_RF <= M")
        if self.L < 1 or self.r_min <= 0 or self.r_max < self.r_min or self.p_t <= 0:
            raise ValueError("invalid scenario parameters")

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.f_c

    @property
    def sigma2(self):
        return self.p_t * 10.0 ** (-self.snr_db / 10.0)

    def array(self):
        if self.geometry == "UPA":
            return ArrayGeometry.upa(self.upa_shape[0], self.upa_shape[1], self.wavelength)
        return ArrayGeometry.ula(self.M, self.wavelength)

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class ChannelBatch:
    """``H[s]`` is the M x K channel of sample ``s``; path arrays are (S, K, L[, 2])."""
    H: np.ndarray
    alpha: np.ndarray
    theta: np.ndarray
    r: np.ndarray
    scenario: ScenarioConfig
    split: str = "train"
    index: np.ndarray = field(default=None)

    def __len__(self):
        return self.H.shape[0]

    def paths(self, s):
        return [[PathParams(complex(self.alpha[s, k, l]),
                            tuple(self.theta[s, k, l]) if self.theta.ndim == 4
                            else float(self.theta[s, k, l]),
                            float(self.r[s, k, l]))
                 for l in range(self.alpha.shape[2])] for k in range(self.alpha.shape[1])]

    def regenerate(self):
        return synthesize(self.scenario.array(), self.alpha, self.theta, self.r)

    def subset(self, idx):
        idx = np.asarray(idx)
        return ChannelBatch(self.H[idx], self.alpha[idx], self.theta[idx], self.r[idx],
                            self.scenario, self.split,
                            None if self.index is None else self.index[idx])


def _draw_paths(rng, scenario, n_users):
    L = scenario.L
    alpha = complex_normal(rng, (n_users, L))
    tshape = (n_users, L, 2) if scenario.geometry == "UPA" else (n_users, L)
    theta = rng.uniform(-1.0, 1.0, tshape)
    r = rng.uniform(scenario.r_min, scenario.r_max, (n_users, L))
    return alpha, theta, r


def synthesize(geometry, alpha, theta, r, chunk=4096):
    """Channels from path parameters, (S, K, L) -> (S, M, K)."""
    alpha = np.asarray(alpha, dtype=np.complex128)
    S, K, L = alpha.shape
    theta = np.asarray(theta, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    H = np.empty((S, geometry.M, K), dtype=np.complex128)
    for a in range(0, S, chunk):
        b = min(S, a + chunk)
        th = theta[a:b].reshape((-1, 2) if geometry.kind == "UPA" else (-1,))
        d = path_delays(geometry, th, r[a:b].ravel())
        h = kernels.synthesize(d, np.ascontiguousarray(alpha[a:b].ravel()),
                               np.ascontiguousarray(r[a:b].ravel()), geometry.wavelength, L)
        H[a:b] = h.reshape(b - a, K, geometry.M).transpose(0, 2, 1)
    return H


def generate_channel(scenario, rng):
    """One user's channel vector (M,) and its L path parameters."""
    alpha, theta, r = _draw_paths(rng, scenario, 1)
    h = synthesize(scenario.array(), alpha[None], theta[None], r[None])[0, :, 0]
    paths = [PathParams(complex(alpha[0, l]),
                        tuple(theta[0, l]) if theta.ndim == 3 else float(theta[0, l]),
                        float(r[0, l])) for l in range(scenario.L)]
    return h, paths


def generate_batch(scenario, size, split="train", seed=None):
    """``size`` samples of ``split``; sample ``i`` uses substream (dataset, split, i)."""
    seed = scenario.seed if seed is None else seed
    draws = [_draw_paths(substream(seed, "dataset", split, i), scenario, scenario.K)
             for i in range(size)]
    if draws:
        alpha, theta, r = (np.stack(x) for x in zip(*draws))
    else:
        alpha = np.zeros((0, scenario.K, scenario.L), np.complex128)
        theta = np.zeros((0, scenario.K, scenario.L) + ((2,) if scenario.geometry == "UPA" else ()))
        r = np.zeros((0, scenario.K, scenario.L))
    H = synthesize(scenario.array(), alpha, theta, r)
    return ChannelBatch(H, alpha, theta, r, scenario, split, np.arange(size))


def split_sizes(size):
    """70/15/15 split: floor for train and validation, remainder to test."""
    n_train = int(np.floor(0.7 * size + 1e-9))
    n_val = int(np.floor(0.15 * size + 1e-9))
    return n_train, n_val, size - n_train - n_val


def generate_dataset(scenario, size):
    """Train, validation and test batches drawn from disjoint substreams."""
    if size < 10:
        raise ValueError("dataset size must be at least 10")
    sizes = split_sizes(size)
    return tuple(generate_batch(scenario, n, split)
                 for n, split in zip(sizes, ("train", "val", "test")))


def add_awgn(X, sigma2, rng):
    """``X`` plus i.i.d. CN(0, sigma2) noise."""
    if sigma2 < 0:
        raise ValueError("noise variance must be nonnegative")
    X = np.asarray(X)
    if sigma2 == 0:
        return X.copy()
    return X + complex_normal(rng, X.shape, sigma2)
