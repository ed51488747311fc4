"""Strict JSON experiment configuration.

A config is one JSON object with the sections ``scenario``, ``network``,
``training``, ``protocol``, ``dataset``, ``reference``, ``eval`` and
optionally ``sweep``, plus top-level ``mode`` and ``output_dir``. Any key
not listed here is rejected so a typo cannot silently fall back to a
default.
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Tuple

from .channel import ScenarioConfig
from .precoding import ReferenceOptimizerConfig
from .protocol import ProtocolConfig
from .training import TrainConfig

SWEEP_AXES = ("snr", "pilots", "K", "L", "r_max", "upa_shape", "sensing_n")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    N: int = 4
    dims: Tuple[int, ...] = (512, 256, 128)
    eps_cm: float = 1e-12
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.N < 1 or not self.dims or any(d < 1 for d in self.dims):
            raise ValueError("network needs N >= 1 and positive layer widths")


@dataclass(frozen=True)
class DatasetConfig:
    size: int = 4000
    seed: Optional[int] = None


@dataclass(frozen=True)
class EvalConfig:
    seed: int = 0
    test_samples: Optional[int] = None


@dataclass(frozen=True)
class ProtocolSection:
    I: int = 2
    damping: float = 0.0
    snr_ul_db: Optional[float] = None


@dataclass(frozen=True)
class SweepConfig:
    axis: str = "snr"
    values: Tuple = ()
    repetitions: int = 1
    retrain: bool = True

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.values:
            raise ValueError("sweep needs at least one value")


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    reference: ReferenceOptimizerConfig = field(default_factory=ReferenceOptimizerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: Optional[SweepConfig] = None
    mode: str = "indirect"
    output_dir: str = "runs"

    def __post_init__(self):
        if self.mode not in ("indirect", "direct"):
            raise ValueError("mode must be 'indirect' or 'direct'")

    @property
    def protocol_config(self):
        return ProtocolConfig(self.network.N, self.protocol.I, self.protocol.damping,
                              self.protocol.snr_ul_db)

    @property
    def dataset_seed(self):
        return self.scenario.seed if self.dataset.seed is None else self.dataset.seed

    def with_(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        d = asdict(self)
        d["training"] = asdict(self.training)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_SECTIONS = {
    "scenario": ScenarioConfig,
    "network": NetworkConfig,
    "training": TrainConfig,
    "protocol": ProtocolSection,
    "dataset": DatasetConfig,
    "reference": ReferenceOptimizerConfig,
    "eval": EvalConfig,
    "sweep": SweepConfig,
}
_TUPLE_FIELDS = {("scenario", "upa_shape"), ("network", "dims"), ("sweep", "values")}


def _build(section, cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")
    kw = {}
    for k, v in data.items():
        if (section, k) in _TUPLE_FIELDS and v is not None:
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"section {section!r}: {e}") from None


def from_dict(d):
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    top = set(_SECTIONS) | {"mode", "output_dir"}
    unknown = sorted(set(d) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kw = {k: _build(k, cls, d[k]) for k, cls in _SECTIONS.items() if k in d and d[k] is not None}
    for k in ("mode", "output_dir"):
        if k in d:
            kw[k] = d[k]
    try:
        return ExperimentSpec(**kw)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load(path):
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
    return from_dict(d)
