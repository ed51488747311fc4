"""Learned hybrid beamforming for near-field extremely large arrays.

Setting ``XLHBF_THREADS`` caps BLAS and numba threads. It has to be seen
before numpy loads, so it is applied here.
"""

import os as _os

_threads = _os.environ.get("XLHBF_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:   # bad values are reported by the CLI
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
