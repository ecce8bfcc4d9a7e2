"""Seeded random streams.

Every consumer draws from its own PCG64 generator derived from a root seed
and a purpose key through numpy's ``SeedSequence`` spawn keys, so adding
draws in one consumer never perturbs another.
"""

from __future__ import annotations

import numpy as np

CORPUS = 0
LEXICON = 1
INIT = 2
BATCH = 3
CANVAS = 4
REGIME = 5
DECODE = 6
GRADCHECK = 7


def stream(seed: int, purpose: int, *sub: int) -> np.random.Generator:
    """Return the PCG64 generator for ``(seed, purpose, *sub)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(purpose, *sub))
    return np.random.Generator(np.random.PCG64(ss))
