"""Checkpoint and dataset snapshot files.

Both use a plain-text manifest next to a flat binary blob. Complex arrays
are stored as little-endian float64 (re, im) pairs, real arrays as plain
little-endian float64, in manifest order with no padding.

Checkpoint manifest::

    xlhbf-checkpoint 1
    mode indirect
    M 32
    ...
    param sensing complex 4,2,32
    buffer bn1.mean complex 256
"""

import json
import os
from dataclasses import asdict

import numpy as np

from . import autodiff as ad
from . import network as nw
from .channel import ChannelBatch, ScenarioConfig

CHECKPOINT_MAGIC = "xlhbf-checkpoint"
DATASET_MAGIC = "xlhbf-dataset"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _shape_str(shape):
    return ",".join(str(int(s)) for s in shape) if len(shape) else "-"


def _parse_shape(s):
    return () if s == "-" else tuple(int(x) for x in s.split(","))


def _encode(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return "complex", np.ascontiguousarray(a, dtype=np.complex128).view("<f8").tobytes()
    return "real", np.ascontiguousarray(a, dtype="<f8").tobytes()


def _decode(buf, offset, kind, shape):
    n = int(np.prod(shape, dtype=np.int64)) * (2 if kind == "complex" else 1)
    end = offset + 8 * n
    if end > len(buf):
        raise FormatError("binary payload is truncated")
    raw = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).astype(np.float64)
    a = raw.view(np.complex128) if kind == "complex" else raw
    return a.reshape(shape).copy(), end


def _blob_path(path):
    return path + ".bin"


def _write_pair(path, lines, chunks):
    with open(_blob_path(path), "wb") as f:
        for c in chunks:
            f.write(c)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _read_manifest(path, magic):
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].split() != [magic, str(FORMAT_VERSION)]:
        raise FormatError(f"{path}: not a version {FORMAT_VERSION} {magic} manifest")
    with open(_blob_path(path), "rb") as f:
        blob = f.read()
    return lines[1:], blob


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, params, seeds=None, scenario=None):
    lines = [f"{CHECKPOINT_MAGIC} {FORMAT_VERSION}",
             f"mode {params.mode}",
             f"M {params.M}", f"K {params.K}", f"N_RF {params.N_RF}", f"N {params.N}",
             f"dims {_shape_str(params.dims)}",
             f"eps_cm {params.eps_cm!r}", f"bn_eps {params.bn_eps!r}",
             f"bn_momentum {params.bn_momentum!r}",
             "bn_inference running"]
    seeds = seeds or {}
    lines.append("seeds " + (" ".join(f"{k}={int(v)}" for k, v in seeds.items()) or "-"))
    if scenario is not None:
        lines.append("scenario " + json.dumps(asdict(scenario), sort_keys=True))
    chunks = []
    entries = [("param", k, t.value) for k, t in params.tensors.items()]
    for p in range(1, params.P + 1):
        entries.append(("buffer", f"bn{p}.mean", params.bn_mean[p]))
        entries.append(("buffer", f"bn{p}.cov", params.bn_cov[p]))
    for tag, name, a in entries:
        kind, raw = _encode(a)
        lines.append(f"{tag} {name} {kind} {_shape_str(a.shape)}")
        chunks.append(raw)
    _write_pair(path, lines, chunks)


def load_checkpoint(path):
    """Return ``(params, meta)``; ``meta`` has the seeds and scenario (if stored)."""
    lines, blob = _read_manifest(path, CHECKPOINT_MAGIC)
    head, entries = {}, []
    for ln in lines:
        key, _, rest = ln.partition(" ")
        if key in ("param", "buffer"):
            name, kind, shape = rest.split()
            entries.append((key, name, kind, _parse_shape(shape)))
        else:
            head[key] = rest
    try:
        params = nw.NetworkParams(head["mode"], int(head["M"]), int(head["K"]),
                                  int(head["N_RF"]), int(head["N"]),
                                  _parse_shape(head["dims"]),
                                  eps_cm=float(head["eps_cm"]), bn_eps=float(head["bn_eps"]),
                                  bn_momentum=float(head["bn_momentum"]))
    except KeyError as e:
        raise FormatError(f"{path}: manifest lacks {e.args[0]!r}") from None
    off = 0
    for tag, name, kind, shape in entries:
        a, off = _decode(blob, off, kind, shape)
        if tag == "param":
            params.tensors[name] = ad.Tensor(a, requires_grad=True, name=name)
        else:
            p, stat = name[2:].split(".")
            (params.bn_mean if stat == "mean" else params.bn_cov)[int(p)] = a
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes in payload")
    expected = nw.init_params(params.M, params.K, params.N_RF, params.N, params.dims,
                              params.mode, rng=np.random.default_rng(0))
    for k, t in expected.tensors.items():
        if k not in params.tensors or params.tensors[k].shape != t.shape:
            raise FormatError(f"{path}: parameter {k!r} missing or misshapen")
    seeds = {}
    if head.get("seeds", "-") != "-":
        seeds = {k: int(v) for k, v in (s.split("=") for s in head["seeds"].split())}
    meta = {"seeds": seeds, "bn_inference": head.get("bn_inference", "running")}
    if "scenario" in head:
        d = json.loads(head["scenario"])
        if d.get("upa_shape") is not None:
            d["upa_shape"] = tuple(d["upa_shape"])
        meta["scenario"] = ScenarioConfig(**d)
    return params, meta


# ---------------------------------------------------------------------------
# dataset snapshots
# ---------------------------------------------------------------------------

_DATASET_ARRAYS = ("H", "alpha", "theta", "r")


def save_dataset(path, batches):
    """Write one or more :class:`ChannelBatch` splits (sharing one scenario)."""
    if not batches:
        raise ValueError("nothing to save")
    scenario = batches[0].scenario
    lines = [f"{DATASET_MAGIC} {FORMAT_VERSION}",
             "scenario " + json.dumps(asdict(scenario), sort_keys=True)]
    chunks = []
    for b in batches:
        if b.scenario != scenario:
            raise ValueError("all splits must share a scenario")
        lines.append(f"split {b.split} {len(b)}")
        for name in _DATASET_ARRAYS:
            a = getattr(b, name)
            kind, raw = _encode(a)
            lines.append(f"array {b.split}.{name} {kind} {_shape_str(a.shape)}")
            chunks.append(raw)
    _write_pair(path, lines, chunks)


def load_dataset(path):
    """Return the list of splits in file order."""
    lines, blob = _read_manifest(path, DATASET_MAGIC)
    scenario, splits, arrays, order = None, {}, {}, []
    off = 0
    for ln in lines:
        key, _, rest = ln.partition(" ")
        if key == "scenario":
            d = json.loads(rest)
            if d.get("upa_shape") is not None:
                d["upa_shape"] = tuple(d["upa_shape"])
            scenario = ScenarioConfig(**d)
        elif key == "split":
            name, size = rest.split()
            splits[name] = int(size)
            order.append(name)
        elif key == "array":
            name, kind, shape = rest.split()
            arrays[name], off = _decode(blob, off, kind, _parse_shape(shape))
        else:
            raise FormatError(f"{path}: unknown manifest key {key!r}")
    if scenario is None:
        raise FormatError(f"{path}: missing scenario")
    out = []
    for s in order:
        a = [arrays[f"{s}.{n}"] for n in _DATASET_ARRAYS]
        if len(a[0]) != splits[s]:
            raise FormatError(f"{path}: split {s} size mismatch")
        out.append(ChannelBatch(*a, scenario=scenario, split=s, index=np.arange(splits[s])))
    return out


def exists(path):
    return os.path.exists(path) and os.path.exists(_blob_path(path))
