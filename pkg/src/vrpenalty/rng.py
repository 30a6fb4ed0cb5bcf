"""Seeded, stream-separated random number generation.

Every run owns one :class:`SampleContext` per role (estimator samples,
iterate selection, replicate experiments).  Streams are derived from
``numpy.random.SeedSequence`` with the stream id as spawn key, so changing
how many draws one role consumes never shifts another role's sequence.
"""

from __future__ import annotations

import numpy as np

# Named stream ids; one per role that consumes randomness.
STREAM_ESTIMATOR = 0
STREAM_SELECTION = 1
STREAM_REPLICATE = 2
STREAM_INSTANCE = 3
STREAM_DIAGNOSTIC = 4

_MASK64 = (1 << 64) - 1


class SampleContext:
    """Deterministic draw source identified by ``(seed, stream_id)``.

    ``counter`` counts draw calls (not scalars), and is reset together with
    the generator by :meth:`reset`.
    """

    __slots__ = ("seed", "stream_id", "counter", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        if not (0 <= int(seed) <= _MASK64) or not (0 <= int(stream_id) <= _MASK64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.reset()

    def reset(self) -> None:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self.counter = 0

    @property
    def generator(self) -> np.random.Generator:
        """Underlying generator, for bulk draws that do not go through the counter."""
        return self._gen

    def standard_normal(self, size=None):
        self.counter += 1
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        self.counter += 1
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        """Integers in ``[low, high)``, like ``Generator.integers``."""
        self.counter += 1
        return self._gen.integers(low, high, size=size)

    def spawn(self, stream_id: int) -> "SampleContext":
        """Fresh context with the same seed on another stream."""
        return SampleContext(self.seed, stream_id)

    def __repr__(self):
        return f"SampleContext(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"
