"""Seeded, platform-stable random streams with derivable substreams.

Every stochastic step in the library draws from a :class:`Prng` so that a
single integer seed pins the entire artifact: parameter initialisation,
shape sampling, pose sampling, rendering and RANSAC. Substreams derived
with :meth:`Prng.derive` are independent of draw order in the parent,
which keeps per-sample generation reproducible under any scheduling.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key):
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & 0xFFFFFFFF


class Prng:
    """PCG64 stream addressed by (seed, derivation path)."""

    def __init__(self, seed, _path=()):
        self.seed = int(seed)
        self._path = tuple(_path)
        self._counter = 0
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *self._path]))
        )

    def derive(self, *keys) -> "Prng":
        """Independent child stream; keys may be ints or short strings."""
        if not keys:
            keys = (self._counter,)
            self._counter += 1
        return Prng(self.seed, self._path + tuple(_key_to_int(k) for k in keys))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n):
        return self._gen.permutation(n)
