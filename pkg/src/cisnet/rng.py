"""Counter-based seed splitting: every random stream is keyed off one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        return int(k) & 0xFFFFFFFF
    return zlib.crc32(str(k).encode())


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Independent generator for (seed, *keys); same inputs give the same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *map(_key, keys)]))


def derive_seed(seed: int, *keys) -> int:
    return int(rng_for(seed, *keys).integers(0, 2**31 - 1))
