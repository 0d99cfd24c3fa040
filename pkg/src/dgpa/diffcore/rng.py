"""Counter-based random streams.

Every stochastic piece of the toolkit (data generation, weight init,
dropout masks, random-feature draws, smearing trials) pulls from an
`RngStream`.  A stream is fully described by a ``(seed, counter)`` pair;
each draw call derives a fresh Philox generator keyed on that pair and
bumps the counter, so identical ``(seed, counter)`` states give identical
draws on every platform, and streams can be split without coordination.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One round of splitmix64; used to derive child-stream seeds."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


class RngStream:
    """Deterministic, splittable source of random draws.

    Attributes:
        seed: 64-bit stream identity.
        counter: number of draw calls made so far on this stream.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter) & _MASK64

    def _generator(self) -> np.random.Generator:
        gen = np.random.Generator(np.random.Philox(key=[self.seed, self.counter]))
        self.counter = (self.counter + 1) & _MASK64
        return gen

    def split(self) -> "RngStream":
        """Derive an independent child stream; advances this stream once."""
        child_seed = _splitmix64(self.seed ^ _splitmix64(self.counter))
        self.counter = (self.counter + 1) & _MASK64
        return RngStream(child_seed)

    def normal(self, shape, sigma: float = 1.0, mean: float = 0.0) -> np.ndarray:
        return self._generator().normal(mean, sigma, size=shape).astype(np.float64)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._generator().uniform(low, high, size=shape).astype(np.float64)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator().permutation(n)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._generator().integers(low, high, size=shape)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, counter={self.counter})"
