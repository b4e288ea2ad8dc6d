"""Reproducible random streams.

Every stochastic routine takes an explicit ``numpy.random.Generator``. Streams
are built from the counter-based Philox bit generator so that a seed maps to
the same draws on every platform, and independent child streams can be split
off without sharing state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ALGORITHM = "philox4x64"


@dataclass(frozen=True)
class RngStream:
    seed: int
    algorithm: str = ALGORITHM

    def generator(self) -> np.random.Generator:
        if self.algorithm != ALGORITHM:
            raise ValueError(f"unsupported generator {self.algorithm!r}")
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))

    def spawn(self, n: int) -> list[np.random.Generator]:
        children = np.random.SeedSequence(self.seed).spawn(n)
        return [np.random.Generator(np.random.Philox(c)) for c in children]


def make_rng(seed: int) -> np.random.Generator:
    """Shorthand for ``RngStream(seed).generator()``."""
    return RngStream(int(seed)).generator()


def rademacher(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0
