"""Named, reproducible random substreams derived from one root seed.

Every stochastic component (data generation, weight init, shuffling,
flip augmentation, target sampling) draws from its own substream so a
single component can be replayed in isolation.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(root_seed: int, *path) -> np.random.Generator:
    """Return an independent Generator for ``(root_seed, path)``.

    Path elements are hashed with crc32 so the derivation is stable
    across platforms and interpreter runs.
    """
    keys = tuple(zlib.crc32(str(p).encode("utf-8")) for p in path)
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=keys)
    return np.random.Generator(np.random.PCG64(seq))


def substream_seed(root_seed: int, *path) -> int:
    """A 63-bit integer seed for ``(root_seed, path)``, for APIs taking ints."""
    keys = tuple(zlib.crc32(str(p).encode("utf-8")) for p in path)
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=keys)
    return int(seq.generate_state(1, np.uint64)[0] >> np.uint64(1))
