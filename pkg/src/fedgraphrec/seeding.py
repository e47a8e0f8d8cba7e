"""Seed splitting.

Every random draw in the package comes from ``make_rng(seed, *keys)``. The
keys (strings or non-negative ints) are mixed with the master seed through
:class:`numpy.random.SeedSequence`, so a stream depends only on its key path
and never on the order in which other streams were consumed. That is what
makes parallel client execution reproduce sequential execution bit for bit.
"""

from __future__ import annotations

import zlib

import numpy as np


def _word(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    key = int(key)
    if key < 0:
        raise ValueError("seed keys must be non-negative")
    return key


def derive_seed(seed: int, *keys: int | str) -> int:
    """A 63-bit child seed for the key path ``(seed, *keys)``."""
    state = np.random.SeedSequence([_word(seed), *map(_word, keys)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([_word(seed), *map(_word, keys)]))
