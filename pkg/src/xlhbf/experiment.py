"""Sweeps over one evaluation axis with four methods per point.

Each sweep point writes its own CSV (``point_NNN.csv``) so parallel or
interrupted runs never share a file. Every row carries the seed tuple
(dataset, training, evaluation) that reproduces it.
"""

import csv
import os
import time
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from . import io
from .channel import generate_batch, generate_dataset
from .precoding import fully_digital_mmse, projected_gradient_reference
from .protocol import ProtocolError, evaluate_analog, random_cm_baseline, run_direct, run_indirect, score
from .rng import substream
from .training import TrainingDivergedError, fit

SCHEMA = 1
METHODS = ("trained", "random_cm", "pg_reference", "fully_digital")
COLUMNS = ("axis", "value", "rep", "method", "mode", "status", "n_samples",
           "sum_rate_mean", "sum_rate_se", "per_user_rate_mean", "per_user_rate_se",
           "sum_mse_db_mean", "sum_mse_db_se", "power_rel_err", "infer_ms",
           "seed_dataset", "seed_train", "seed_eval", "error")
RETRAIN_FREE_AXES = ("snr", "r_max", "L")


@dataclass
class PointSetup:
    index: int
    axis: str
    value: object
    spec: object


def apply_axis(spec, axis, value):
    """Experiment spec for one sweep point."""
    sc, net, prot = spec.scenario, spec.network, spec.protocol
    if axis == "snr":
        sc = sc.with_(snr_db=float(value))
    elif axis == "pilots":
        n = int(value) - prot.I
        if n < 1:
            raise ValueError(f"pilot budget {value} leaves no sensing slot with I={prot.I}")
        net = replace(net, N=n)
    elif axis == "K":
        sc = sc.with_(K=int(value), N_RF=max(sc.N_RF, int(value)))
    elif axis == "L":
        sc = sc.with_(L=int(value))
    elif axis == "r_max":
        sc = sc.with_(r_max=float(value))
    elif axis == "upa_shape":
        my, mz = (int(v) for v in value)
        sc = sc.with_(geometry="UPA", upa_shape=(my, mz), M=my * mz)
    elif axis == "sensing_n":
        net = replace(net, N=int(value))
    elif axis != "none":
        raise ValueError(f"unknown sweep axis {axis!r}")
    return spec.with_(scenario=sc, network=net)


def points(spec):
    if spec.sweep is None:
        return [PointSetup(0, "none", "-", spec)]
    return [PointSetup(i, spec.sweep.axis, v, apply_axis(spec, spec.sweep.axis, v))
            for i, v in enumerate(spec.sweep.values)]


def _stats(x):
    x = np.asarray(x, dtype=np.float64)
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return float(np.mean(x)), se


def power_rel_err(F_RF, F_BB, p_t):
    P = np.sum(np.abs(np.asarray(F_RF) @ np.asarray(F_BB)) ** 2, axis=(-2, -1))
    return float(np.max(np.abs(P - p_t)) / p_t)


def evaluate_methods(params, H, spec, rng_key):
    """Metrics for all methods on test channels ``H``; returns {method: (Metrics, F_RF, F_BB, ms)}."""
    sc = spec.scenario
    seed = spec.eval.seed
    out = {}
    if params is not None:
        t0 = time.perf_counter()
        if params.mode == "indirect":
            r = run_indirect(H, params, sc)
            out["trained"] = (r.metrics, r.f_rf, r.f_bb)
        else:
            tr = run_direct(H, params, spec.protocol_config, sc,
                            substream(seed, *rng_key, "protocol"))
            out["trained"] = (tr.metrics, tr.f_rf, tr.f_bb)
        out["trained"] += (1e3 * (time.perf_counter() - t0) / len(H),)
    t0 = time.perf_counter()
    r = random_cm_baseline(H, sc, substream(seed, *rng_key, "random_cm"))
    out["random_cm"] = (r.metrics, r.f_rf, r.f_bb, 1e3 * (time.perf_counter() - t0) / len(H))
    t0 = time.perf_counter()
    ref = projected_gradient_reference(H, spec.reference, sc, rng=substream(seed, *rng_key, "pg"))
    r = evaluate_analog(H, ref.f_rf, sc)
    out["pg_reference"] = (r.metrics, r.f_rf, r.f_bb, 1e3 * (time.perf_counter() - t0) / len(H))
    t0 = time.perf_counter()
    d = fully_digital_mmse(H, sc.p_t, sc.sigma2)
    eye = np.eye(H.shape[-2])
    m = score(H, eye, d.f_bb, d.beta, sc.sigma2)
    out["fully_digital"] = (m, eye, d.f_bb, 1e3 * (time.perf_counter() - t0) / len(H))
    return out


def _row(pt, rep, method, spec, status, res=None, n=0, error=""):
    row = {"axis": pt.axis, "value": pt.value if not isinstance(pt.value, (list, tuple))
           else "x".join(str(v) for v in pt.value),
           "rep": rep, "method": method, "mode": spec.mode, "status": status, "n_samples": n,
           "seed_dataset": spec.dataset_seed, "seed_train": spec.training.seed,
           "seed_eval": spec.eval.seed, "error": error}
    if res is not None:
        m, F_RF, F_BB, ms = res
        row["sum_rate_mean"], row["sum_rate_se"] = _stats(m.sum_rate)
        row["per_user_rate_mean"], row["per_user_rate_se"] = _stats(m.per_user_rate)
        row["sum_mse_db_mean"], row["sum_mse_db_se"] = _stats(m.sum_mse_db)
        row["power_rel_err"] = power_rel_err(F_RF, F_BB, spec.scenario.p_t)
        row["infer_ms"] = ms
    return row


def write_rows(path, rows, comments=()):
    with open(path, "w", newline="") as f:
        f.write(f"# schema={SCHEMA}\n")
        for c in comments:
            f.write(f"# {c}\n")
        w = csv.DictWriter(f, fieldnames=COLUMNS, restval="", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_rows(path):
    with open(path) as f:
        first = f.readline().strip()
        if first != f"# schema={SCHEMA}":
            raise ValueError(f"{path}: unsupported schema line {first!r}")
        lines = [ln for ln in f if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_channels(spec, dataset, rep):
    """Rep 0 uses the dataset's test split; later reps draw fresh test sets."""
    test = dataset[2] if rep == 0 else generate_batch(
        spec.scenario.with_(seed=spec.dataset_seed), len(dataset[2]), f"test-rep{rep}")
    H = test.H
    if spec.eval.test_samples is not None:
        H = H[:spec.eval.test_samples]
    return H


def _compatible(params, spec):
    sc = spec.scenario
    return (params.M, params.K, params.N_RF, params.N) == (sc.M, sc.K, sc.N_RF, spec.network.N) \
        and params.mode == spec.mode


def run_experiment(spec, out_dir=None, params=None, progress=None, save_models=True):
    """Run every sweep point; returns the list of per-point CSV paths.

    ``params`` (e.g. a loaded checkpoint) is reused at every point and no
    training happens. Without it a model is trained per point, except that
    axes which leave the network shape unchanged reuse the first model when
    ``sweep.retrain`` is false.
    """
    out_dir = out_dir or spec.output_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "experiment.json"), "w") as f:
        f.write(spec.to_json())
    reps = spec.sweep.repetitions if spec.sweep is not None else 1
    reuse = params
    paths = []
    for pt in points(spec):
        ps = pt.spec
        sc = ps.scenario.with_(seed=ps.dataset_seed)
        ps = ps.with_(scenario=sc)
        dataset = generate_dataset(sc, ps.dataset.size)
        model, error = reuse, ""
        if model is not None and not _compatible(model, ps):
            raise ValueError(f"supplied model does not fit sweep point {pt.value!r}")
        if model is None:
            try:
                res = fit(ps.mode, dataset, ps.training, sc, ps.network.dims, ps.network.N,
                          protocol=ps.protocol_config,
                          log_path=os.path.join(out_dir, f"point_{pt.index:03d}_train.csv"))
                model = res.params
                if save_models:
                    io.save_checkpoint(os.path.join(out_dir, f"point_{pt.index:03d}.ckpt"), model,
                                       {"dataset": ps.dataset_seed, "train": ps.training.seed}, sc)
            except TrainingDivergedError as e:
                error = f"training diverged: {e}"
            if (model is not None and spec.sweep is not None and not spec.sweep.retrain
                    and spec.sweep.axis in RETRAIN_FREE_AXES):
                reuse = model
        rows = []
        for rep in range(reps):
            H = test_channels(ps, dataset, rep)
            key = ("eval", pt.index, rep)
            try:
                res = evaluate_methods(model, H, ps, key)
            except ProtocolError as e:
                error = str(e)
                res = evaluate_methods(None, H, ps, key)
            for method in METHODS:
                if method in res:
                    rows.append(_row(pt, rep, method, ps, "ok", res[method], len(H)))
                else:
                    rows.append(_row(pt, rep, method, ps, "failed", error=error))
        path = os.path.join(out_dir, f"point_{pt.index:03d}.csv")
        write_rows(path, rows, [f"axis={pt.axis} value={rows[0]['value']}"])
        paths.append(path)
        if progress is not None:
            progress(pt, rows)
    return paths
