"""Conditional distributions ``p(target | condition)``.

A kernel exposes ``log_prob(target, condition)`` and
``sample(condition, rng)``; both broadcast over leading batch axes, so a batch
of conditions of shape ``(n, condition_dim)`` yields ``n`` samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .distributions import LOG_2PI


class ConditionalKernel(Protocol):
    target_dim: int
    condition_dim: int

    def log_prob(self, target, condition): ...

    def sample(self, condition, rng: np.random.Generator): ...


def _gauss_logpdf(x, mean, std):
    u = (x - mean) / std
    return np.sum(-0.5 * u * u - np.log(std), axis=-1) - 0.5 * x.shape[-1] * LOG_2PI


@dataclass(frozen=True)
class GaussianKernel:
    """Mean-field Gaussian ``N(mean(c), diag std(c)²)`` with callable moments."""

    mean_fn: Callable[[np.ndarray], np.ndarray]
    std_fn: Callable[[np.ndarray], np.ndarray]
    target_dim: int
    condition_dim: int

    def moments(self, condition):
        c = np.asarray(condition, dtype=float)
        mean = np.asarray(self.mean_fn(c), dtype=float)
        std = np.broadcast_to(np.asarray(self.std_fn(c), dtype=float), mean.shape)
        if np.any(std <= 0):
            raise ValueError("kernel standard deviation must be positive")
        return mean, std

    def log_prob(self, target, condition):
        x = np.asarray(target, dtype=float)
        mean, std = self.moments(condition)
        return _gauss_logpdf(x, mean, std)

    def sample(self, condition, rng):
        mean, std = self.moments(condition)
        return mean + std * rng.standard_normal(mean.shape)


@dataclass(frozen=True)
class AffineGaussianKernel:
    """``N(A c + b, diag std²)`` with constant noise; serializable."""

    A: np.ndarray
    b: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.broadcast_to(np.asarray(self.b, dtype=float), (A.shape[0],)).copy()
        s = np.broadcast_to(np.asarray(self.std, dtype=float), (A.shape[0],)).copy()
        if np.any(s <= 0):
            raise ValueError("kernel standard deviation must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "std", s)

    @property
    def target_dim(self) -> int:
        return self.A.shape[0]

    @property
    def condition_dim(self) -> int:
        return self.A.shape[1]

    def mean(self, condition):
        return np.asarray(condition, dtype=float) @ self.A.T + self.b

    def log_prob(self, target, condition):
        return _gauss_logpdf(np.asarray(target, dtype=float), self.mean(condition), self.std)

    def sample(self, condition, rng):
        m = self.mean(condition)
        return m + self.std * rng.standard_normal(m.shape)


@dataclass(frozen=True)
class IndependentKernel:
    """A kernel that ignores its condition: ``p(t | c) = q(t)``."""

    dist: object
    condition_dim: int

    @property
    def target_dim(self) -> int:
        return self.dist.dim

    def log_prob(self, target, condition):
        return self.dist.log_prob(target)

    def sample(self, condition, rng):
        c = np.asarray(condition, dtype=float)
        n = int(np.prod(c.shape[:-1])) if c.ndim > 1 else 1
        s = self.dist.sample(n, rng)
        return s.reshape(c.shape[:-1] + (self.target_dim,)) if c.ndim > 1 else s[0]
