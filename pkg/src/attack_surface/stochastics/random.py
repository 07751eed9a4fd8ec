"""Seeded, splittable random streams.

A stream is identified by ``(seed, stream_id)``; the same pair always yields
the same variate sequence because the bit generator is PCG64 keyed through
``SeedSequence(seed, spawn_key=(stream_id, ...))``.  Child streams extend the
spawn key, so sub-components of a simulation (arrivals, defense draws, ...)
never share state with each other or with sibling replications.
"""

from __future__ import annotations

import numbers
import zlib

import numpy as np


def _key(label) -> int:
    if isinstance(label, numbers.Integral):
        return int(label)
    return zlib.crc32(str(label).encode())


class RandomStream:
    """Single-owner random stream. Do not advance one instance from two threads."""

    def __init__(self, seed: int = 0, stream: int = 0, _path: tuple = ()):
        if seed < 0:
            raise ValueError("seed must be nonnegative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._path = tuple(_path)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,) + self._path)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, label) -> "RandomStream":
        """Independent sub-stream named by an int or string label."""
        return RandomStream(self.seed, self.stream, self._path + (_key(label),))

    def replicate(self, index: int) -> "RandomStream":
        """Stream for replication ``index``; disjoint from every other replication."""
        return self.child(("replication", index).__repr__())

    def __repr__(self):
        path = f", path={self._path}" if self._path else ""
        return f"RandomStream(seed={self.seed}, stream={self.stream}{path})"


def as_generator(rng) -> np.random.Generator:
    """Coerce None / int / RandomStream / Generator into a numpy Generator."""
    if rng is None:
        return RandomStream(0).generator
    if isinstance(rng, RandomStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, numbers.Integral):
        return RandomStream(int(rng)).generator
    raise TypeError(f"cannot build a random generator from {type(rng).__name__}")


def as_stream(rng) -> RandomStream:
    if isinstance(rng, RandomStream):
        return rng
    if rng is None:
        return RandomStream(0)
    if isinstance(rng, numbers.Integral):
        return RandomStream(int(rng))
    raise TypeError(f"expected a RandomStream or integer seed, got {type(rng).__name__}")
