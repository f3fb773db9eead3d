"""Seed derivation helpers.

Every stochastic operation in the package is a pure function of its inputs
and a seed. Substreams are derived from (master_seed, *path) through
``numpy.random.SeedSequence``, so per-sample streams are independent of
batch size, thread count and evaluation order.
"""

from __future__ import annotations

import numpy as np

# Fixed stream tags so different pipeline stages never share a substream.
STREAM_WORLD = 1
STREAM_FAKE = 2
STREAM_ATTACK = 3
STREAM_TRAIN = 4
STREAM_SPLIT = 5
STREAM_DDM = 6
STREAM_SELFSUP = 7


def as_rng(seed: int | np.random.Generator) -> np.random.Generator:
    """Accept either a seed or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(int(seed))


def substream(master_seed: int, *path: int) -> np.random.Generator:
    """Derive an independent generator for (master_seed, *path)."""
    return np.random.default_rng([int(master_seed), *[int(p) for p in path]])


def subseed(master_seed: int, *path: int) -> int:
    """Derive a 63-bit integer seed for (master_seed, *path)."""
    ss = np.random.SeedSequence([int(master_seed), *[int(p) for p in path]])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
