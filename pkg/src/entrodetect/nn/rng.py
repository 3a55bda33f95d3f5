"""Deterministic random streams for initialization, dropout, and shuffling.

Built on the counter-based Philox generator so the same seed yields the
same draw sequence on every platform, and so independent child streams can
be split off without correlation.
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """A seeded, splittable source of random draws.

    Two streams constructed with the same seed produce bit-identical
    sequences. ``split`` derives an independent child stream; the parent
    continues unaffected.
    """

    def __init__(self, seed: int, _seq: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def split(self) -> "RngStream":
        child = self._seq.spawn(1)[0]
        return RngStream(self.seed, _seq=child)

    def random(self, shape=None) -> np.ndarray:
        """Uniform draws in [0, 1) as float64."""
        return self._gen.random(shape, dtype=np.float64)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def normal(self, shape=None, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(loc, scale, shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        """Integer draws in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed})"
