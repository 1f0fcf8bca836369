"""Seeded random streams.

Every randomized stage pulls from a named stream so that stages can be
rerun in isolation: the stream for ``("fold", 3, "init")`` under seed 7 is
the same no matter what ran before it.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *keys) -> int:
    """Mix a global seed with string/int keys into a 64-bit sub-seed."""
    h = hashlib.sha256(str(int(seed)).encode())
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode())
    return int.from_bytes(h.digest()[:8], "little")


class Rng:
    """A family of independent PCG64 generators keyed by stream name.

    ``stream(name)`` returns the same generator object on every call, so
    draws continue where they left off. ``child(*keys)`` gives a fresh
    family whose seed is derived from this one.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            gen = np.random.Generator(np.random.PCG64(derive_seed(self.seed, name)))
            self._streams[name] = gen
        return gen

    def child(self, *keys) -> "Rng":
        return Rng(derive_seed(self.seed, *keys))

    def __repr__(self):
        return f"Rng(seed={self.seed})"
