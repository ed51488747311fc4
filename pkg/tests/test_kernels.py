"""The numba and numpy flavours of each kernel must agree."""

import numpy as np
import pytest

from xlhbf import kernels
from xlhbf._accel import HAS_NUMBA
from xlhbf.channel import ArrayGeometry

from conftest import cplx

pytestmark = pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")


def _spd(rng, b, n):
    G = cplx(rng, b, n, n)
    return G @ G.conj().transpose(0, 2, 1) + np.eye(n)


def test_cholesky_agree(rng):
    A = _spd(rng, 7, 5)
    La, ba, ja = kernels.cholesky_numba(A)
    Lb, bb, jb = kernels.cholesky_numpy(A)
    assert (ba, ja) == (bb, jb) == (-1, -1)
    assert np.allclose(La, Lb, atol=1e-13)
    assert np.allclose(La @ La.conj().transpose(0, 2, 1), A, atol=1e-12)


def test_cholesky_failure_agree():
    A = np.stack([np.eye(3), np.diag([1.0, 2.0, -3.0])]).astype(np.complex128)
    assert kernels.cholesky_numba(A)[1:] == kernels.cholesky_numpy(A)[1:] == (1, 2)


def test_cho_solve_agree(rng):
    A = _spd(rng, 4, 6)
    L = kernels.cholesky_numpy(A)[0]
    B = cplx(rng, 4, 6, 3)
    Xa = kernels.cho_solve_numba(L, B)
    Xb = kernels.cho_solve_numpy(L, B)
    assert np.allclose(Xa, Xb, atol=1e-12)
    assert np.allclose(A @ Xa, B, atol=1e-10)


def test_jacobi_agree(rng):
    G = cplx(rng, 9, 9)
    A = np.ascontiguousarray(G + G.conj().T)
    wa, Va, sa, _ = kernels.jacobi_eigh_numba(A, 1e-12, 100)
    wb, Vb, sb, _ = kernels.jacobi_eigh_numpy(A, 1e-12, 100)
    assert sa > 0 and sb > 0
    assert np.allclose(np.sort(wa), np.sort(wb), atol=1e-10)
    assert np.allclose(np.sort(wa), np.linalg.eigvalsh(A), atol=1e-10)


def test_geometry_kernels_agree(rng):
    geo = ArrayGeometry.ula(16, 3e-3)
    pos = np.ascontiguousarray(geo.positions)
    th = rng.uniform(-1, 1, 12)
    dirs = np.ascontiguousarray(geo.directions(th))
    r = rng.uniform(5, 80, 12)
    da = kernels.path_delays_numba(pos, dirs, r)
    db = kernels.path_delays_numpy(pos, dirs, r)
    assert np.allclose(da, db, rtol=0, atol=1e-15)
    alpha = cplx(rng, 12)
    ha = kernels.synthesize_numba(da, alpha, r, geo.wavelength, 3)
    hb = kernels.synthesize_numpy(da, alpha, r, geo.wavelength, 3)
    assert ha.shape == (4, 16)
    assert np.allclose(ha, hb, atol=1e-13)


def test_adam_agree(rng):
    args = [rng.standard_normal(50) for _ in range(2)] + [np.zeros(50), np.zeros(50)]
    a = [x.copy() for x in args]
    b = [x.copy() for x in args]
    kernels.adam_update_numba(*a, 1e-2, 0.9, 0.999, 1e-8, 0.1, 0.001)
    kernels.adam_update_numpy(*b, 1e-2, 0.9, 0.999, 1e-8, 0.1, 0.001)
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-14, atol=1e-15)


def test_numpy_fallback_subprocess():
    import subprocess
    import sys
    import os
    env = dict(os.environ, XLHBF_NO_NUMBA="1")
    src = os.path.join(os.path.dirname(__file__), "..", "src")
    env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "")
    out = subprocess.run([sys.executable, "-c",
                          "from xlhbf import _accel, kernels; "
                          "print(_accel.backend_name(), kernels.cholesky is kernels.cholesky_numpy)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
