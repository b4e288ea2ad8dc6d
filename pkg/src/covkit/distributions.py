"""Exactly evaluable, samplable code distributions ``p(Z)``.

All ``log_prob`` methods are vectorized over leading axes and return ``-inf``
outside the support. ``sample(n, rng)`` returns an ``(n, dim)`` array (or
``(n,)`` integer labels for :class:`Categorical`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.special import logsumexp

from .core import dual as dm
from .core.linalg import half_logdet_gram
from .core.jacobian import jacobian

LOG_2PI = float(np.log(2.0 * np.pi))


class CodeDistribution(Protocol):
    dim: int

    def log_prob(self, z): ...

    def sample(self, n: int, rng: np.random.Generator): ...


def _check_dim(z, dim):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != dim:
        raise ValueError(f"expected dimension {dim}, got {z.shape[-1]}")
    return z


@dataclass(frozen=True)
class DiagonalGaussian:
    """``N(mean, diag(std²))``; factorized, so per-coordinate marginals are exact."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        s = np.broadcast_to(np.asarray(self.std, dtype=float), m.shape).copy()
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise ValueError("standard deviations must be positive and finite")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_prob_dims(self, z):
        """Per-coordinate log-densities, shape ``(..., dim)``."""
        u = (z - self.mean) / self.std
        return -0.5 * u * u - np.log(self.std) - 0.5 * LOG_2PI

    def log_prob(self, z):
        if not dm.is_dual(z):
            z = _check_dim(z, self.dim)
        return dm.sum(self.log_prob_dims(z), axis=-1)

    def marginal_log_prob(self, z, dims):
        """Log-density of the coordinates ``dims`` of ``z``."""
        dims = list(dims)
        z = np.asarray(z, dtype=float)
        return np.sum(self.log_prob_dims(z)[..., dims], axis=-1)

    def sample(self, n, rng):
        return self.mean + self.std * rng.standard_normal((n, self.dim))

    def support(self):
        return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)


def StandardNormal(dim: int) -> DiagonalGaussian:
    return DiagonalGaussian(np.zeros(dim), np.ones(dim))


@dataclass(frozen=True)
class UniformBox:
    """Uniform density on an axis-aligned box ``[lo, hi)``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("uniform box needs lo < hi in every dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def log_volume(self) -> float:
        return float(np.sum(np.log(self.hi - self.lo)))

    def log_prob_dims(self, z):
        z = np.asarray(dm.value(z), dtype=float)
        inside = (z >= self.lo) & (z < self.hi)
        return np.where(inside, -np.log(self.hi - self.lo), -np.inf)

    def log_prob(self, z):
        zv = _check_dim(dm.value(z), self.dim)
        inside = np.all((zv >= self.lo) & (zv < self.hi), axis=-1)
        return np.where(inside, -self.log_volume, -np.inf)

    def marginal_log_prob(self, z, dims):
        return np.sum(self.log_prob_dims(z)[..., list(dims)], axis=-1)

    def sample(self, n, rng):
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def support(self):
        return self.lo.copy(), self.hi.copy()


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture ``Σ_k p(k) N(μ_k, diag σ_k²)``."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        if mu.shape[0] != w.size:
            mu = mu.T if mu.shape[1] == w.size else mu
        sd = np.broadcast_to(np.asarray(self.stds, dtype=float), mu.shape).copy()
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(sd <= 0) or not np.all(np.isfinite(sd)):
            raise ValueError("degenerate mixture covariance")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", sd)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def component_log_prob(self, z):
        """``log p(k) + log N(z | μ_k, Σ_k)`` with shape ``(..., K)``."""
        z = _check_dim(z, self.dim)
        u = (z[..., None, :] - self.means) / self.stds
        ll = -0.5 * np.sum(u * u, axis=-1) - np.sum(np.log(self.stds), axis=-1)
        return ll - 0.5 * self.dim * LOG_2PI + np.log(self.weights)

    def log_prob(self, z):
        return logsumexp(self.component_log_prob(z), axis=-1)

    def posterior(self, z):
        """Responsibilities ``p(k | z)``."""
        c = self.component_log_prob(z)
        return np.exp(c - logsumexp(c, axis=-1, keepdims=True))

    def sample(self, n, rng):
        k = rng.choice(self.n_components, size=n, p=self.weights)
        return self.means[k] + self.stds[k] * rng.standard_normal((n, self.dim))


@dataclass(frozen=True)
class Categorical:
    """Distribution over integer codes ``0..K−1``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probs", p)

    dim = 1

    @property
    def n_codes(self) -> int:
        return self.probs.size

    def log_prob(self, k):
        k = np.asarray(k)
        with np.errstate(divide="ignore"):
            lp = np.log(self.probs)
        valid = (k >= 0) & (k < self.n_codes)
        return np.where(valid, lp[np.clip(k, 0, self.n_codes - 1)], -np.inf)

    def sample(self, n, rng):
        return rng.choice(self.n_codes, size=n, p=self.probs)

    def entropy(self) -> float:
        p = self.probs[self.probs > 0]
        return float(-np.sum(p * np.log(p)))


@dataclass(frozen=True)
class ChartUniform:
    """Uniform density on a manifold, written in chart coordinates.

    ``p(Z = z) = |det(Jᵀ J)|^{1/2} / V`` where ``J`` is the chart Jacobian at
    ``z`` and ``V`` the manifold volume. ``domain`` is the box the chart
    coordinates live in.
    """

    chart: object
    volume: float
    domain: UniformBox = field(default=None)

    @property
    def dim(self) -> int:
        return self.chart.dim_in

    def log_prob(self, z):
        z = np.asarray(z, dtype=float)
        J = jacobian(self.chart, z)
        out = half_logdet_gram(J) - np.log(self.volume)
        if self.domain is not None:
            out = np.where(np.isfinite(self.domain.log_prob(z)), out, -np.inf)
        return out

    def sample(self, n, rng):
        # rejection against the Jacobian volume factor on the chart domain
        if self.domain is None:
            raise ValueError("sampling needs a bounded chart domain")
        out = []
        have = 0
        probe = self.domain.sample(4096, rng)
        bound = float(np.max(np.exp(half_logdet_gram(jacobian(self.chart, probe))))) * 1.5
        while have < n:
            z = self.domain.sample(max(n, 1024), rng)
            w = np.exp(half_logdet_gram(jacobian(self.chart, z)))
            keep = rng.random(len(z)) * bound < w
            out.append(z[keep])
            have += int(keep.sum())
        return np.concatenate(out)[:n]
