"""Over-the-air simulation of the indirect and direct beamforming protocols.

Indirect: the network maps the true channel to ``F_RF``; the digital stage
is the closed-form KKT precoder on the true channel.

Direct: N TDMA sensing slots ``Y_n = Phi_n (H + V_n)`` feed the network,
the resulting ``F_RF`` is deployed as the fixed uplink combiner ``F_RF^H``
for I repetition blocks, the averaged observations give ``H_eq_hat`` and the
digital stage is built from that estimate. The true channel is only used to
synthesize received signals and to score the result.
"""

import base64
import json
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import network as nw
from .precoding import (digital_from_effective, estimate_effective_channel, kkt_digital,
                        random_cm, sinr_and_sum_rate, sum_mse)
from .rng import complex_normal

STAGES = ("sensing", "inference", "estimation", "precoding")


@dataclass(frozen=True)
class ProtocolConfig:
    N: int = 4
    I: int = 2
    damping: float = 0.0
    snr_ul_db: Optional[float] = None

    def __post_init__(self):
        if self.N < 1 or self.I < 1:
            raise ValueError("need N >= 1 and I >= 1")
        if self.damping < 0:
            raise ValueError("damping must be nonnegative")

    @property
    def pilots(self):
        return self.N + self.I

    def sigma2_ul(self, scenario):
        if self.snr_ul_db is None:
            return scenario.sigma2
        return scenario.p_t * 10.0 ** (-self.snr_ul_db / 10.0)


@dataclass
class Metrics:
    sum_rate: np.ndarray
    sinr: np.ndarray
    sum_mse: np.ndarray

    @property
    def sum_mse_db(self):
        return 10.0 * np.log10(self.sum_mse)

    @property
    def per_user_rate(self):
        return self.sum_rate / self.sinr.shape[-1]

    def as_dict(self):
        return {"sum_rate": self.sum_rate, "sinr": self.sinr, "sum_mse": self.sum_mse,
                "sum_mse_db": self.sum_mse_db}


@dataclass
class HybridResult:
    f_rf: np.ndarray
    f_bb: np.ndarray
    beta: np.ndarray
    metrics: Metrics


class ProtocolError(RuntimeError):
    def __init__(self, stage, trace, cause):
        super().__init__(f"protocol failed in stage {stage!r}: {cause}")
        self.stage = stage
        self.trace = trace


def score(H, F_RF, F_BB, beta, sigma2):
    """Sum rate, per-user SINR and sum-MSE of a hybrid precoder on the true channel."""
    sinr, rate = sinr_and_sum_rate(H, F_RF, F_BB, sigma2)
    return Metrics(rate, sinr, sum_mse(H, F_RF, F_BB, beta, sigma2))


def evaluate_analog(H, F_RF, scenario):
    """KKT digital stage on the true channel for a given analog precoder."""
    d = kkt_digital(H, F_RF, scenario.p_t, scenario.sigma2)
    return HybridResult(np.asarray(F_RF), d.f_bb, d.beta,
                        score(H, F_RF, d.f_bb, d.beta, scenario.sigma2))


def run_indirect(H, params, scenario):
    if params.mode != "indirect":
        raise ValueError("run_indirect needs parameters trained in indirect mode")
    F = nw.forward(H, params, training=False).value
    if np.ndim(H) == 2:
        F = F[0]
    return evaluate_analog(H, F, scenario)


def random_cm_baseline(H, scenario, rng):
    H = np.asarray(H)
    F = random_cm(rng, H.shape[-2], scenario.N_RF, H.shape[:-2])
    return evaluate_analog(H, F, scenario)


def _b64(a):
    a = np.ascontiguousarray(a, dtype=np.complex128)
    return base64.b64encode(a.view("<f8").tobytes()).decode("ascii")


def _unb64(s, shape):
    raw = np.frombuffer(base64.b64decode(s), dtype="<f8")
    return raw.view(np.complex128).reshape(shape).copy()


@dataclass
class ProtocolTrace:
    N: int
    I: int
    measurements: Optional[np.ndarray] = None
    f_rf: Optional[np.ndarray] = None
    h_eq_hat: Optional[np.ndarray] = None
    f_bb: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    metrics: Optional[Metrics] = None
    stages: List[str] = field(default_factory=list)
    timings_ms: Dict[str, float] = field(default_factory=dict)
    failed_stage: Optional[str] = None

    @property
    def pilots(self):
        return self.N + self.I

    _MATRICES = ("measurements", "f_rf", "h_eq_hat", "f_bb")

    def to_json(self, include_matrices=False):
        doc = {
            "N": self.N, "I": self.I, "pilots": self.pilots,
            "stages": list(self.stages),
            "timings_ms": dict(self.timings_ms),
            "failed_stage": self.failed_stage,
            "shapes": {k: list(getattr(self, k).shape) for k in self._MATRICES
                       if getattr(self, k) is not None},
        }
        if self.beta is not None:
            doc["beta"] = np.atleast_1d(self.beta).tolist()
        if self.metrics is not None:
            doc["metrics"] = {
                "sum_rate": np.atleast_1d(self.metrics.sum_rate).tolist(),
                "sum_mse": np.atleast_1d(self.metrics.sum_mse).tolist(),
                "sinr": np.asarray(self.metrics.sinr).tolist(),
                "mean_sum_rate": float(np.mean(self.metrics.sum_rate)),
            }
        if include_matrices:
            doc["matrices"] = {k: {"shape": list(getattr(self, k).shape),
                                   "encoding": "base64-le-f64-interleaved",
                                   "data": _b64(getattr(self, k))}
                               for k in self._MATRICES if getattr(self, k) is not None}
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        t = cls(doc["N"], doc["I"], stages=doc["stages"], timings_ms=doc["timings_ms"],
                failed_stage=doc.get("failed_stage"))
        for k, m in doc.get("matrices", {}).items():
            setattr(t, k, _unb64(m["data"], tuple(m["shape"])))
        if "beta" in doc:
            t.beta = np.asarray(doc["beta"])
        if "metrics" in doc:
            m = doc["metrics"]
            t.metrics = Metrics(np.asarray(m["sum_rate"]), np.asarray(m["sinr"]),
                                np.asarray(m["sum_mse"]))
        return t


def repetition_observations(H, F_RF, I, sigma2, rng):
    """I blocks of ``F_RF^H (H + N_i)``, shape (I, B, N_RF, K)."""
    H = np.asarray(H)
    obs = np.empty((I,) + H.shape[:-2] + (F_RF.shape[-1], H.shape[-1]), dtype=np.complex128)
    Fh = np.conj(np.swapaxes(F_RF, -1, -2))
    for i in range(I):
        Hn = H + complex_normal(rng, H.shape, sigma2) if sigma2 > 0 else H
        obs[i] = Fh @ Hn
    return obs


def run_direct(H_true, params, protocol, scenario, rng):
    """Simulate the direct protocol on a batch (B, M, K) or single (M, K) channel."""
    if params.mode != "direct":
        raise ValueError("run_direct needs parameters trained in direct mode")
    if protocol.N != params.N:
        raise ValueError(f"protocol N={protocol.N} but network has N={params.N}")
    H = np.asarray(H_true, dtype=np.complex128)
    single = H.ndim == 2
    Hb = H[None] if single else H
    s2 = protocol.sigma2_ul(scenario)
    trace = ProtocolTrace(protocol.N, protocol.I)
    stage = None

    def enter(name):
        trace.stages.append(name)
        return name, time.perf_counter()

    def leave(name, t0):
        trace.timings_ms[name] = 1e3 * (time.perf_counter() - t0)

    try:
        stage, t0 = enter("sensing")
        noise = complex_normal(rng, (Hb.shape[0], protocol.N) + Hb.shape[1:], s2) if s2 > 0 else None
        Y = nw.measure(params["sensing"], Hb, noise).value
        trace.measurements = Y
        leave(stage, t0)

        stage, t0 = enter("inference")
        F = nw.forward(Y, params, training=False).value
        trace.f_rf = F
        leave(stage, t0)

        stage, t0 = enter("estimation")
        obs = repetition_observations(Hb, F, protocol.I, s2, rng)
        trace.h_eq_hat = estimate_effective_channel(obs).h_eq
        leave(stage, t0)

        stage, t0 = enter("precoding")
        d = digital_from_effective(trace.h_eq_hat, F, scenario.p_t, scenario.sigma2,
                                   damping=protocol.damping)
        trace.f_bb, trace.beta = d.f_bb, d.beta
        trace.metrics = score(Hb, F, d.f_bb, d.beta, scenario.sigma2)
        leave(stage, t0)
    except Exception as e:
        trace.failed_stage = stage
        raise ProtocolError(stage, trace, e) from e
    if single:
        for k in ("measurements", "f_rf", "h_eq_hat", "f_bb"):
            setattr(trace, k, getattr(trace, k)[0])
        trace.beta = trace.beta[0]
        m = trace.metrics
        trace.metrics = Metrics(m.sum_rate[0], m.sinr[0], m.sum_mse[0])
    return trace
