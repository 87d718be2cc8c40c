"""Reproducible random streams.

Every random draw in the package comes from a generator derived from a master
seed and a tuple of integer keys (purpose, window, block, ...).  Work split
over particle blocks therefore produces the same numbers whatever the number
of workers.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["Streams", "as_generator", "key"]


def key(tag) -> int:
    """Map a string or int tag to a stable non-negative integer."""
    if isinstance(tag, (int, np.integer)):
        if tag < 0:
            raise ValueError("stream keys must be non-negative")
        return int(tag)
    return zlib.crc32(str(tag).encode("utf8"))


class Streams:
    """Counter-split family of generators rooted at one master seed.

    ``Streams(seed).generator("noise", 3, 7)`` always returns a fresh generator
    in the same state, independent of call order.
    """

    def __init__(self, seed: int, prefix: tuple = ()):
        self.seed = int(seed)
        self.prefix = tuple(key(k) for k in prefix)

    def generator(self, *keys) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.prefix + tuple(key(k) for k in keys))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys) -> "Streams":
        return Streams(self.seed, self.prefix + tuple(key(k) for k in keys))

    def __repr__(self):
        return f"Streams(seed={self.seed}, prefix={self.prefix})"


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, a Streams, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, Streams):
        return rng.generator("default")
    return np.random.default_rng(rng)
