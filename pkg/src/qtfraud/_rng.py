"""Seeded random-number substreams.

All randomness in the package flows from one root seed through named
substreams, so each pipeline stage (dataset, sampling, init, training)
is independently reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(root_seed: int, *names: object) -> np.random.Generator:
    """Return a Generator for the substream identified by ``names``.

    The same (root_seed, names) always yields the same stream; distinct
    names yield statistically independent streams.
    """
    keys = tuple(
        zlib.crc32(str(n).encode("utf-8")) if not isinstance(n, int) else n & 0xFFFFFFFF
        for n in names
    )
    seq = np.random.SeedSequence(entropy=int(root_seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=keys)
    return np.random.Generator(np.random.PCG64(seq))
