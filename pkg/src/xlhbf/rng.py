"""Named, counter-based random substreams.

Every random draw in the package comes from ``substream(seed, *names)``:
a Philox generator keyed by the master seed and a path of names such as
``("dataset", "train", 17)``. Streams with different paths are independent
and a stream's output does not depend on what other streams consumed, so
generation order and parallel scheduling never change results.
"""

import zlib

import numpy as np


def _word(name):
    if isinstance(name, (int, np.integer)):
        if name < 0:
            raise ValueError("substream indices must be nonnegative")
        return int(name)
    return zlib.crc32(str(name).encode("utf-8")) | (1 << 32)


def seed_sequence(master_seed, *names):
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(_word(n) for n in names))


def substream(master_seed, *names):
    """Return an independent ``numpy.random.Generator`` for ``names``."""
    return np.random.Generator(np.random.Philox(seed_sequence(master_seed, *names)))


def complex_normal(rng, shape, variance=1.0):
    """i.i.d. CN(0, variance) samples (each real part has variance/2)."""
    s = np.sqrt(variance / 2.0)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
