"""Numba switch.

Set ``XLHBF_NO_NUMBA=1`` to force the pure-numpy kernels. If numba cannot
be imported the numpy kernels are used as well.
"""

import os

_DISABLED = os.environ.get("XLHBF_NO_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    import numba
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

USE_NUMBA = HAS_NUMBA and not _DISABLED


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def set_num_threads(n):
    """Apply a thread count to numba (if active). BLAS threads must be set
    through the environment before numpy is imported."""
    if n is None:
        return
    n = int(n)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if USE_NUMBA:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
