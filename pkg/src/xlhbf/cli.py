"""Command-line entry point: ``xlhbf <subcommand> ...``.

Failures exit with status 2 and print ``error [stage]: message`` so scripts
can tell which step broke.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import __version__, _accel
from . import config as cfgmod
from . import io


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"{cause}")
        self.stage = stage


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, e, tb):
        if e is not None and not isinstance(e, (StageError, SystemExit, KeyboardInterrupt)):
            raise StageError(self.name, f"{type(e).__name__}: {e}") from e
        return False


def _say(quiet, *a):
    if not quiet:
        print(*a, flush=True)


def cmd_train(args):
    from .channel import generate_dataset
    from .training import fit
    with _Stage("config"):
        spec = cfgmod.load(args.config)
        mode = args.mode or spec.mode
        spec = spec.with_(mode=mode)
        sc = spec.scenario.with_(seed=spec.dataset_seed)
    with _Stage("dataset"):
        if args.dataset and io.exists(args.dataset):
            dataset = io.load_dataset(args.dataset)
            if dataset[0].scenario != sc:
                raise ValueError("dataset snapshot scenario differs from config")
        else:
            dataset = generate_dataset(sc, spec.dataset.size)
            if args.dataset:
                io.save_dataset(args.dataset, list(dataset))
    with _Stage("train"):
        log_path = args.log or args.out + ".log.csv"
        t0 = time.perf_counter()
        res = fit(mode, dataset, spec.training, sc, spec.network.dims, spec.network.N,
                  protocol=spec.protocol_config, log_path=log_path,
                  progress=None if args.quiet else lambda r: print(
                      f"epoch {r['epoch']:4d} loss {r['train_loss']:.5f} "
                      f"val_rate {r['val_sum_rate']:.4f} lr {r['lr']:.2e}", flush=True))
    with _Stage("checkpoint"):
        io.save_checkpoint(args.out, res.params,
                           {"dataset": spec.dataset_seed, "train": spec.training.seed}, sc)
    _say(args.quiet, f"best epoch {res.log.best_epoch} val sum rate {res.log.best_val_sum_rate:.4f} "
         f"({time.perf_counter() - t0:.1f} s) -> {args.out}")
    return 0


def _load_model(path):
    with _Stage("checkpoint"):
        return io.load_checkpoint(path)[0]


def cmd_eval(args):
    from .experiment import run_experiment, read_rows
    with _Stage("config"):
        spec = cfgmod.load(args.config).with_(sweep=None)
    params = _load_model(args.checkpoint)
    spec = spec.with_(mode=params.mode)
    with _Stage("eval"):
        out_dir = os.path.dirname(os.path.abspath(args.out))
        tmp = os.path.join(out_dir, ".eval-" + os.path.basename(args.out))
        paths = run_experiment(spec, tmp, params=params, save_models=False)
        os.replace(paths[0], args.out)
        for f in os.listdir(tmp):
            os.remove(os.path.join(tmp, f))
        os.rmdir(tmp)
    for r in read_rows(args.out):
        _say(args.quiet, f"{r['method']:14s} {r['status']:6s} sum_rate {r['sum_rate_mean']}")
    return 0


def cmd_sweep(args):
    from .experiment import run_experiment
    with _Stage("config"):
        spec = cfgmod.load(args.config)
        if spec.sweep is None:
            raise ValueError("config has no sweep section")
    params = _load_model(args.checkpoint) if args.checkpoint else None
    with _Stage("sweep"):
        paths = run_experiment(spec, args.out_dir, params=params,
                               progress=None if args.quiet else
                               lambda pt, rows: print(f"point {pt.index} {pt.axis}={pt.value} done",
                                                      flush=True))
    _say(args.quiet, "\n".join(paths))
    return 0


def cmd_analyze_beams(args):
    from .analysis import BeamAnalysisSpec, analyze_beams, beam_target
    from .channel import generate_batch
    from .experiment import SCHEMA
    with _Stage("config"):
        spec = cfgmod.load(args.config)
        kind, *idx = args.target.split(":")
        target = (kind,) + tuple(int(i) for i in idx)
        bspec = BeamAnalysisSpec(args.theta_count, args.r_count, args.r_lo, args.r_hi, target)
    params = _load_model(args.checkpoint)
    with _Stage("analysis"):
        sc = spec.scenario
        H = None
        if kind == "frf":
            H = generate_batch(sc.with_(seed=spec.dataset_seed), args.sample + 1, "test").H[args.sample]
        v = beam_target(bspec, params, H)
        bm = analyze_beams(bspec, sc.array(), v)
        with open(args.out_prefix + "_heatmap.csv", "w") as f:
            f.write(f"# schema={SCHEMA}\n# target={args.target}\n")
            f.write("theta,r,value,seed_dataset\n")
            for i, t in enumerate(bm.thetas):
                for j, r in enumerate(bm.rs):
                    f.write(f"{t!r},{r!r},{bm.heatmap[i, j]!r},{spec.dataset_seed}\n")
        with open(args.out_prefix + "_marginal.csv", "w") as f:
            f.write(f"# schema={SCHEMA}\n# target={args.target}\n")
            f.write("r,value,seed_dataset\n")
            for r, m in zip(bm.rs, bm.marginal):
                f.write(f"{r!r},{m!r},{spec.dataset_seed}\n")
    t, r = bm.peak()
    _say(args.quiet, f"peak at theta={t:.4f} r={r:.3f} m")
    return 0


def cmd_feature_pca(args):
    from .analysis import feature_pca, max_phase_jump
    from .experiment import SCHEMA
    with _Stage("config"):
        spec = cfgmod.load(args.config)
        lo = args.r_lo if args.r_lo is not None else spec.scenario.r_min
        hi = args.r_hi if args.r_hi is not None else spec.scenario.r_max
    params = _load_model(args.checkpoint)
    with _Stage("analysis"):
        rs = np.linspace(lo, hi, args.points)
        res = feature_pca(params, spec.scenario.array(), rs, args.theta)
        with open(args.out, "w") as f:
            f.write(f"# schema={SCHEMA}\n")
            f.write("# explained=" + ",".join(repr(float(x)) for x in res.explained[:10]) + "\n")
            f.write("r,pc1_re,pc1_im,pc1_phase,pc1_mag,pc2_mag\n")
            for r, z, m2 in zip(rs, res.pc1, res.pc2_magnitude):
                f.write(f"{r!r},{z.real!r},{z.imag!r},{np.angle(z)!r},{abs(z)!r},{m2!r}\n")
    _say(args.quiet, f"explained variance PC1 {res.explained[0]:.4f} PC2 {res.explained[1]:.4f}; "
         f"max PC1 phase step {max_phase_jump(res.pc1):.4f} rad")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_suites
    with _Stage("gradcheck"):
        results = run_suites(seeds=args.seeds)
    worst = 0.0
    for name, err in results:
        worst = max(worst, err)
        _say(args.quiet, f"{name:28s} {err:.3e}")
    if worst >= args.tol:
        raise StageError("gradcheck", f"max relative error {worst:.3e} >= {args.tol:g}")
    return 0


def cmd_version(args):
    print(f"xlhbf {__version__} (kernels: {_accel.backend_name()}, numpy {np.__version__})")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="xlhbf", description="Learned near-field hybrid beamforming")
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a network and write a checkpoint")
    s.add_argument("--config", required=True)
    s.add_argument("--mode", choices=("indirect", "direct"))
    s.add_argument("--out", required=True, help="checkpoint manifest path")
    s.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    s.add_argument("--dataset", help="dataset snapshot to load, or to write if missing")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint against the baselines")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="result CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="run the sweep described in a config")
    s.add_argument("--config", required=True)
    s.add_argument("--checkpoint", help="reuse this model at every point")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("analyze-beams", help="codebook correlation of a learned beam")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--target", default="sensing:0:0", help="sensing:N:I or frf:J")
    s.add_argument("--sample", type=int, default=0, help="test sample for frf targets")
    s.add_argument("--theta-count", type=int, default=181)
    s.add_argument("--r-count", type=int, default=71)
    s.add_argument("--r-lo", type=float, default=5.0)
    s.add_argument("--r-hi", type=float, default=40.0)
    s.add_argument("--out-prefix", required=True)
    s.set_defaults(func=cmd_analyze_beams)

    s = sub.add_parser("feature-pca", help="complex PCA of shared-MLP features on a range sweep")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--points", type=int, default=200)
    s.add_argument("--theta", type=float, default=0.0)
    s.add_argument("--r-lo", type=float)
    s.add_argument("--r-hi", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_feature_pca)

    s = sub.add_parser("gradcheck", help="finite-difference checks of every adjoint and the full loss")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--tol", type=float, default=1e-5)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("version")
    s.set_defaults(func=cmd_version)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    threads = os.environ.get("XLHBF_THREADS")
    try:
        if threads:
            with _Stage("threads"):
                _accel.set_num_threads(int(threads))
        return args.func(args)
    except StageError as e:
        print(f"error [{e.stage}]: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
