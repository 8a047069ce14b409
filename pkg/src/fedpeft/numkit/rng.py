"""Counter-based random streams.

An :class:`Rng` is an immutable ``(seed, stream)`` pair. Draws come from a
Philox generator keyed by both values, so two different stream ids never
share a sequence and results do not depend on call order elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1

# Named top-level streams.
INIT = 1
PARTITION = 2
SPLIT = 3
SHUFFLE = 4
DROPOUT = 5
SYNTH = 6
PROBE = 7


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class Rng:
    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= MASK64 and 0 <= self.stream <= MASK64):
            raise ValueError("seed and stream must be unsigned 64-bit integers")

    def child(self, index):
        """Derived stream; distinct ``index`` values give distinct keys."""
        return Rng(self.seed, _splitmix64((self.stream * 0x100000001B3 + int(index) + 1) & MASK64))

    def generator(self):
        """A fresh NumPy generator positioned at the start of this stream."""
        return np.random.Generator(np.random.Philox(key=self.seed | (self.stream << 64)))
