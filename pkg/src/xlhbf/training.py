"""Unsupervised training of the analog-precoder network.

The loss is the batch mean of the concentrated sum-MSE, so no labels are
needed. Optimisation is Adam on the real components of every parameter,
with global-norm gradient clipping, a reduce-on-plateau learning-rate
schedule and early stopping, both driven by the validation sum rate.
"""

import csv
import io
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from . import kernels
from . import network as nw
from .precoding import JITTER
from .protocol import ProtocolConfig, evaluate_analog, run_direct
from .rng import substream

LOG_COLUMNS = ("epoch", "step", "train_loss", "val_sum_rate", "lr", "wall_ms", "seed")


class TrainingDivergedError(FloatingPointError):
    """Non-finite loss or gradient; ``checkpoint`` holds the last good parameters."""

    def __init__(self, message, checkpoint=None, name=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.name = name


@dataclass
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 1024
    sched_factor: float = 0.5
    sched_patience: int = 200
    sched_threshold: float = 1e-4
    es_patience: int = 300
    es_threshold: float = 1e-4
    max_epochs: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    grad_clip: float = 10.0
    val_every: int = 1
    min_lr: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 2 or self.max_epochs < 0 or self.val_every < 1:
            raise ValueError("invalid training configuration")
        if not 0 < self.sched_factor < 1 or self.sched_patience < 0 or self.es_patience < 1:
            raise ValueError("invalid scheduler / early-stopping configuration")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps_adam <= 0:
            raise ValueError("invalid Adam configuration")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def loss(H, F_RF, p_t, sigma2, K=None):
    """Batch mean of ``tr((I + c H^H F (F^H F)^{-1} F^H H)^{-1})``, c = P_t/(K sigma2)."""
    H = ad.as_tensor(H)
    F = ad.as_tensor(F_RF)
    if F.ndim == 2:
        F = ad.reshape(F, (1,) + F.shape)
    if H.ndim == 2:
        H = ad.reshape(H, (1,) + H.shape)
    Kh = H.shape[-1]
    K = Kh if K is None else K
    c = p_t / (K * sigma2)
    Q = ad.herm(F) @ H
    G = ad.herm(F) @ F
    n = G.shape[-1]
    tr = np.trace(G.value, axis1=-2, axis2=-1).real
    G = G + (JITTER * tr / n)[..., None, None] * np.eye(n)
    G = 0.5 * (G + ad.herm(G))
    X = ad.hsolve(G, Q)
    T = ad.herm(Q) @ X
    S = np.eye(Kh) + c * 0.5 * (T + ad.herm(T))
    Z = ad.hsolve(S, np.broadcast_to(np.eye(Kh, dtype=np.complex128), S.shape))
    return ad.mean(ad.real(ad.trace(Z)))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def _real_view(a):
    return a.view(np.float64) if np.iscomplexobj(a) else a


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        m = {k: np.zeros_like(_real_view(t.value)) for k, t in params.tensors.items()}
        v = {k: np.zeros_like(x) for k, x in m.items()}
        return cls(m, v, 0)

    def copy(self):
        return AdamState({k: x.copy() for k, x in self.m.items()},
                         {k: x.copy() for k, x in self.v.items()}, self.t)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam on the real components, in place.

    ``grads`` maps names to cogradients ``dL/dRe + j dL/dIm``; their real view
    is the ordinary real gradient.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient in parameter {name!r}", name=name)
    state.t += 1
    b1c = 1.0 - beta1 ** state.t
    b2c = 1.0 - beta2 ** state.t
    for name, t in params.tensors.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.value)
        g = _real_view(np.ascontiguousarray(g, dtype=t.value.dtype)).reshape(-1)
        kernels.adam_update(_real_view(t.value).reshape(-1), g, state.m[name].reshape(-1),
                            state.v[name].reshape(-1), lr, beta1, beta2, eps, b1c, b2c)
    return state


def clip_global_norm(grads, max_norm):
    total = float(np.sqrt(sum(np.vdot(g, g).real for g in grads.values())))
    if max_norm and total > max_norm:
        s = max_norm / total
        grads = {k: g * s for k, g in grads.items()}
    return grads, total


# ---------------------------------------------------------------------------
# scheduler and early stopping
# ---------------------------------------------------------------------------

@dataclass
class PlateauTracker:
    """Relative-threshold plateau counter on a metric to maximise."""
    patience: int
    threshold: float
    best: float = -np.inf
    bad: int = 0

    def improved(self, score):
        return score > self.best + self.threshold * abs(self.best) if np.isfinite(self.best) \
            else np.isfinite(score)

    def update(self, score):
        if self.improved(score):
            self.best = score
            self.bad = 0
            return True
        self.bad += 1
        return False


@dataclass
class TrainState:
    params: nw.NetworkParams
    adam: AdamState
    lr: float
    step: int = 0
    epoch: int = 0
    best_score: float = -np.inf
    best_epoch: int = -1
    best_params: Optional[nw.NetworkParams] = None
    scheduler: PlateauTracker = None
    stopper: PlateauTracker = None


@dataclass
class TrainingLog:
    seed: int
    rows: List[dict] = field(default_factory=list)
    lr_changes: List[tuple] = field(default_factory=list)
    best_epoch: int = -1
    best_val_sum_rate: float = float("nan")
    stopped_early: bool = False

    def add(self, **row):
        self.rows.append(row)

    def to_csv(self, include_wall=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.rows:
            w.writerow([r["epoch"], r["step"], repr(r["train_loss"]), repr(r["val_sum_rate"]),
                        repr(r["lr"]), r["wall_ms"] if include_wall else 0, r["seed"]])
        for epoch, old, new in self.lr_changes:
            buf.write(f"# lr_change epoch={epoch} from={old!r} to={new!r}\n")
        buf.write(f"# best_epoch={self.best_epoch} best_val_sum_rate={self.best_val_sum_rate!r}\n")
        buf.write(f"# stopped_early={int(self.stopped_early)}\n")
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())

    @staticmethod
    def read_rows(path):
        with open(path) as f:
            lines = [ln for ln in f if not ln.startswith("#")]
        return list(csv.DictReader(lines))


@dataclass
class FitResult:
    params: nw.NetworkParams
    log: TrainingLog
    state: TrainState


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validation_sum_rate(params, batch, scenario, protocol=None, seed=0):
    """Mean sum rate through the full inference path.

    Indirect: clean channel in, KKT digital stage. Direct: the simulated
    protocol with noise drawn from a fixed validation substream, so the score
    is comparable across epochs.
    """
    H = batch.H if hasattr(batch, "H") else np.asarray(batch)
    if params.mode == "indirect":
        F = nw.forward(H, params, training=False).value
        return float(np.mean(evaluate_analog(H, F, scenario).metrics.sum_rate))
    protocol = protocol or ProtocolConfig(N=params.N)
    trace = run_direct(H, params, protocol, scenario, substream(seed, "validation", "noise"))
    return float(np.mean(trace.metrics.sum_rate))


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------

def train_step(params, H, scenario, rng, config, state):
    """One minibatch step with fresh sensing noise; returns the loss value."""
    for t in params.tensors.values():
        t.grad = None
    F = nw.forward(H, params, training=True, rng=rng, noise_sigma2=scenario.sigma2)
    L = loss(H, F, scenario.p_t, scenario.sigma2)
    if not np.isfinite(L.value):
        raise TrainingDivergedError(f"non-finite loss at step {state.step}")
    ad.backward(L)
    grads = {k: t.grad for k, t in params.tensors.items() if t.grad is not None}
    grads, _ = clip_global_norm(grads, config.grad_clip)
    adam_step(params, grads, state.adam, state.lr, config.beta1, config.beta2, config.eps_adam)
    state.step += 1
    return float(L.value)


def fit(mode, dataset, config, scenario, dims, N, protocol=None, params=None,
        log_path=None, progress=None):
    """Train a network in ``mode`` on ``dataset`` = (train, val, test).

    Returns the best-validation parameters (early-stopping checkpoint) with
    the training log. Divergence raises :class:`TrainingDivergedError`
    carrying that checkpoint.
    """
    train, val = dataset[0], dataset[1]
    if len(train) == 0 or len(val) == 0:
        raise ValueError("train and validation splits must be nonempty")
    seed = config.seed
    if params is None:
        params = nw.init_params(scenario.M, scenario.K, scenario.N_RF, N, dims, mode,
                                rng=substream(seed, "init"))
    elif params.mode != mode:
        params = params.with_mode(mode)
    state = TrainState(params, AdamState.zeros_like(params), config.lr,
                       scheduler=PlateauTracker(config.sched_patience, config.sched_threshold),
                       stopper=PlateauTracker(config.es_patience, config.es_threshold))
    log = TrainingLog(seed)
    t_start = time.perf_counter()
    n = len(train)
    bs = min(config.batch_size, n)
    if bs < 2:
        raise ValueError("training needs at least 2 samples per batch")

    def snapshot():
        return params.copy()

    state.best_params = snapshot()
    for epoch in range(config.max_epochs):
        state.epoch = epoch
        order = substream(seed, "train", "shuffle", epoch).permutation(n)
        losses = []
        n_batches = n // bs
        for b in range(n_batches):
            idx = np.sort(order[b * bs:(b + 1) * bs])
            rng = substream(seed, "train", "noise", state.step)
            try:
                losses.append(train_step(params, train.H[idx], scenario, rng, config, state))
            except TrainingDivergedError as e:
                e.checkpoint = state.best_params
                raise
        train_loss = float(np.mean(losses)) if losses else float("nan")
        if (epoch + 1) % config.val_every and epoch + 1 != config.max_epochs:
            continue
        score = validation_sum_rate(params, val, scenario, protocol, seed)
        if state.stopper.update(score):
            state.best_score = score
            state.best_epoch = epoch
            state.best_params = snapshot()
        if not state.scheduler.update(score) and state.scheduler.bad > config.sched_patience:
            new_lr = max(config.min_lr, state.lr * config.sched_factor)
            if new_lr != state.lr:
                log.lr_changes.append((epoch, state.lr, new_lr))
                state.lr = new_lr
            state.scheduler.bad = 0
        log.add(epoch=epoch, step=state.step, train_loss=train_loss, val_sum_rate=score,
                lr=state.lr, wall_ms=int(round(1e3 * (time.perf_counter() - t_start))), seed=seed)
        if progress is not None:
            progress(log.rows[-1])
        if state.stopper.bad >= config.es_patience:
            log.stopped_early = True
            break
    if state.best_epoch < 0:
        state.best_score = validation_sum_rate(params, val, scenario, protocol, seed)
        state.best_params = snapshot()
    log.best_epoch = state.best_epoch
    log.best_val_sum_rate = state.best_score
    if log_path is not None:
        log.write(log_path)
    return FitResult(state.best_params, log, state)
