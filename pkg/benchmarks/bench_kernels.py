"""Compare the numba and numpy flavours of every hot kernel.

    python benchmarks/bench_kernels.py [--repeat 20]

Each kernel is run once untimed (numba compilation), then timed over
``--repeat`` calls; the outputs of both flavours are compared as well.
"""

import argparse
import time

import numpy as np

from xlhbf import kernels
from xlhbf.channel import ScenarioConfig


def _spd(rng, b, n):
    A = rng.standard_normal((b, n, n)) + 1j * rng.standard_normal((b, n, n))
    return A @ A.conj().transpose(0, 2, 1) + n * np.eye(n)


def cases(rng):
    sc = ScenarioConfig(M=128, K=4, N_RF=4, L=4)
    geo = sc.array()
    pos = np.ascontiguousarray(geo.positions)
    P = 4096
    th = rng.uniform(-1, 1, P)
    dirs = np.ascontiguousarray(geo.directions(th))
    r = rng.uniform(5, 80, P)
    delays = kernels.path_delays_numpy(pos, dirs, r)
    alpha = rng.standard_normal(P) + 1j * rng.standard_normal(P)
    A = _spd(rng, 1024, 4)
    L = kernels.cholesky_numpy(A)[0]
    B = rng.standard_normal((1024, 4, 4)) + 1j * rng.standard_normal((1024, 4, 4))
    E = _spd(rng, 1, 64)[0]
    n = 400_000
    adam = (rng.standard_normal(n), rng.standard_normal(n), np.zeros(n), np.zeros(n))
    return [
        ("path_delays", (pos, dirs, r)),
        ("synthesize", (delays, alpha, r, geo.wavelength, 4)),
        ("cholesky", (A,)),
        ("cho_solve", (L, B)),
        ("jacobi_eigh", (E, 1e-12, 100)),
        ("adam_update", adam + (1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)),
    ]


def _copy(args):
    return tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)


def _first(out):
    return out[0] if isinstance(out, tuple) else out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':14s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, a in cases(rng):
        fn_nb = getattr(kernels, name + "_numba")
        fn_np = getattr(kernels, name + "_numpy")
        times, outs = {}, {}
        for tag, fn in (("numba", fn_nb), ("numpy", fn_np)):
            fresh = _copy(a)
            out = fn(*fresh)
            outs[tag] = fresh[0] if out is None else _first(out)
            t0 = time.perf_counter()
            for _ in range(args.repeat):
                fn(*_copy(a))
            times[tag] = 1e3 * (time.perf_counter() - t0) / args.repeat
        if name == "jacobi_eigh":
            diff = np.max(np.abs(np.sort(outs["numba"]) - np.sort(outs["numpy"])))
        else:
            diff = np.max(np.abs(outs["numba"] - outs["numpy"]))
        print(f"{name:14s} {times['numba']:10.3f} {times['numpy']:10.3f} "
              f"{times['numpy'] / times['numba']:7.1f}x {diff:10.2e}")


if __name__ == "__main__":
    main()
