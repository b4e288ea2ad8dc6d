"""Ground-truth targets: the anisotropic 2-D Gaussian and the uniform donut.

The donut is the uniform distribution on the annulus ``R0 ≤ ‖x‖ ≤ R1``
(defaults 3 and 8, area 55π). Besides its density and sampler this module
holds the exact donut constructions every model family is checked against:

* a normalizing flow that maps a standard normal onto the annulus by first
  reading off the polar angle and the Rayleigh-distributed radius of the
  code, then pushing the radius through the radial CDF of the annulus;
* the circle of radius ``R_M`` (the mean radius) used as decoder manifold;
* the radial law ``p(R=r) = 2r/(R1² − R0²)`` and its inverse CDF;
* wedge-shaped encoder/decoder kernels of a VAE-style stochastic model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .bijective import FlowMap
from .core import dual as dm
from .core.report import CovReport

TWO_PI = 2.0 * np.pi
R0 = 3.0
R1 = 8.0


class AnalyticTarget(Protocol):
    dim: int

    def log_prob(self, x): ...

    def sample(self, n: int, rng: np.random.Generator): ...

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]: ...


def _pt2(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError(f"expected 2-D points, got dimension {x.shape[-1]}")
    return x


def arg(x):
    """Polar angle in ``[0, 2π)``."""
    x = np.asarray(x, dtype=float)
    a = np.arctan2(x[..., 1], x[..., 0])
    return np.where(a < 0, a + TWO_PI, a)


def circular_distance(a, b):
    """Shortest angular distance between angles, in ``[0, π]``."""
    d = np.mod(np.asarray(a) - np.asarray(b), TWO_PI)
    return np.minimum(d, TWO_PI - d)


# --------------------------------------------------------------------------
# anisotropic Gaussian


@dataclass(frozen=True)
class AnisotropicGaussian:
    """``N(0, diag(1, 1/4))``, the 2-D target of the four-way example."""

    variances: tuple[float, float] = (1.0, 0.25)
    dim: int = 2

    @property
    def std(self):
        return np.sqrt(np.asarray(self.variances))

    def log_prob(self, x):
        x = _pt2(x)
        u = x / self.std
        return -0.5 * np.sum(u * u, axis=-1) - np.sum(np.log(self.std)) - np.log(TWO_PI)

    def sample(self, n, rng):
        return rng.standard_normal((n, 2)) * self.std

    def bounding_box(self):
        s = 8.0 * self.std
        return -s, s


def gaussian_density(x) -> CovReport:
    """Exact ``log N(x | 0, diag(1, 1/4))``."""
    return CovReport({"log_density": AnisotropicGaussian().log_prob(x)}, formula="gaussian")


# --------------------------------------------------------------------------
# donut


@dataclass(frozen=True)
class DonutTarget:
    """Uniform distribution on the annulus ``r0 ≤ ‖x‖ ≤ r1``."""

    r0: float = R0
    r1: float = R1
    dim: int = 2

    def __post_init__(self):
        if not 0 <= self.r0 < self.r1:
            raise ValueError("need 0 ≤ r0 < r1")

    @property
    def area_factor(self) -> float:
        """``r1² − r0²`` (55 for the default donut)."""
        return self.r1**2 - self.r0**2

    @property
    def log_density_value(self) -> float:
        return -float(np.log(np.pi * self.area_factor))

    @property
    def manifold_radius(self) -> float:
        """Mean radius ``(2/3)(r1³ − r0³)/(r1² − r0²)``."""
        return (2.0 / 3.0) * (self.r1**3 - self.r0**3) / self.area_factor

    def inside(self, x):
        r = np.linalg.norm(_pt2(x), axis=-1)
        return (r >= self.r0) & (r <= self.r1)

    def log_prob(self, x):
        return np.where(self.inside(x), self.log_density_value, -np.inf)

    def radial_log_prob(self, r):
        """``log p(R = r)`` for the radial law ``2r/(r1² − r0²)``."""
        r = np.asarray(r, dtype=float)
        ok = (r >= self.r0) & (r <= self.r1)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.log(2.0 * r / self.area_factor)
        return np.where(ok, v, -np.inf)

    def radius_from_uniform(self, u):
        """Inverse radial CDF: ``r = (u (r1² − r0²) + r0²)^{1/2}``."""
        return np.sqrt(np.asarray(u, dtype=float) * self.area_factor + self.r0**2)

    def sample_radius(self, n, rng):
        return self.radius_from_uniform(rng.random(n))

    def sample(self, n, rng):
        a = TWO_PI * rng.random(n)
        r = self.sample_radius(n, rng)
        return np.stack([r * np.cos(a), r * np.sin(a)], axis=-1)

    def bounding_box(self):
        return np.array([-self.r1, -self.r1]), np.array([self.r1, self.r1])


DONUT = DonutTarget()
R_M = DONUT.manifold_radius  # 194/33


def donut_density(x, target: DonutTarget = DONUT) -> CovReport:
    """``log(1/(π(R1² − R0²)))`` on the closed annulus, ``-inf`` elsewhere."""
    return CovReport({"log_density": target.log_prob(x)}, formula="donut")


def donut_split_sample(n: int, rng, target: DonutTarget = DONUT):
    """Angle uniform on ``[0, 2π)``; radius by inverse CDF. Returns ``(x, angle)``."""
    z = TWO_PI * rng.random(n)
    r = target.sample_radius(n, rng)
    return np.stack([r * np.cos(z), r * np.sin(z)], axis=-1), z


# --------------------------------------------------------------------------
# donut normalizing flow


def donut_nf(z, target: DonutTarget = DONUT):
    """Decoder ``z ↦ x``: keep the direction of ``z``, map ``‖z‖`` to the radius.

    ``ρ = 1 − exp(−‖z‖²/2)`` is uniform on (0, 1) for standard-normal ``z``;
    the radius is then ``r = (ρ (R1² − R0²) + R0²)^{1/2}``.
    """
    s = dm.sum(z * z, axis=-1)
    if np.any(np.asarray(dm.value(s)) == 0):
        raise ValueError("the donut flow is undefined at z = 0")
    rho = -dm.expm1(-0.5 * s)
    r = dm.sqrt(rho * target.area_factor + target.r0**2)
    return z * (r / dm.sqrt(s))[..., None]


def donut_nf_inverse(x, target: DonutTarget = DONUT):
    """Closed-form encoder for :func:`donut_nf` on the open annulus."""
    r2 = dm.sum(x * x, axis=-1)
    rho = (r2 - target.r0**2) / target.area_factor
    s = -2.0 * dm.log1p(-rho)
    return x * dm.sqrt(s / r2)[..., None]


def donut_nf_logdet(z, target: DonutTarget = DONUT):
    """``log|det J_g(z)| = −‖z‖²/2 + log((R1² − R0²)/2)``."""
    z = np.asarray(dm.value(z), dtype=float)
    return -0.5 * np.sum(z * z, axis=-1) + np.log(target.area_factor / 2.0)


class DonutNF(FlowMap):
    """The donut normalizing flow as a :class:`~covkit.bijective.FlowMap`."""

    def __init__(self, target: DonutTarget = DONUT):
        self.target = target
        self.dim_in = self.dim_out = 2

    def forward(self, z):
        return donut_nf(z, self.target)

    def inverse(self, x):
        return donut_nf_inverse(x, self.target)

    def log_abs_det_forward(self, z):
        return donut_nf_logdet(z, self.target)

    def log_abs_det_inverse(self, x):
        return -donut_nf_logdet(donut_nf_inverse(np.asarray(x, dtype=float), self.target), self.target)

    def in_domain(self, x):
        r = np.linalg.norm(_pt2(x), axis=-1)
        return (r > self.target.r0) & (r < self.target.r1)


class CircleDecoder(FlowMap):
    """``z ↦ R (cos z, sin z)`` with encoder ``x ↦ arg(x)``."""

    def __init__(self, radius: float = R_M):
        self.radius = float(radius)
        self.dim_in, self.dim_out = 1, 2

    def forward(self, z):
        t = z[..., 0]
        return dm.stack([self.radius * dm.cos(t), self.radius * dm.sin(t)])

    def inverse(self, x):
        t = dm.arctan2(x[..., 1], x[..., 0])
        t = dm.where(dm.value(t) < 0, t + TWO_PI, t)
        return dm.stack([t])


# --------------------------------------------------------------------------
# donut VAE kernels


@dataclass(frozen=True)
class DonutVaeEncoder:
    """``p(z | x) = U(arg x − α0, arg x + α0)`` on the circle of angles."""

    alpha0: float = np.deg2rad(5.0)
    target_dim: int = 1
    condition_dim: int = 2

    def __post_init__(self):
        if not 0 < self.alpha0 < np.pi:
            raise ValueError("wedge half-width must lie in (0, π)")

    def log_prob(self, z, x):
        z = np.asarray(z, dtype=float)[..., 0]
        inside = circular_distance(z, arg(x)) <= self.alpha0
        return np.where(inside, -np.log(2.0 * self.alpha0), -np.inf)

    def sample(self, x, rng):
        a = arg(x)
        u = rng.uniform(-self.alpha0, self.alpha0, size=np.shape(a))
        return np.mod(a + u, TWO_PI)[..., None]


@dataclass(frozen=True)
class DonutVaeDecoder:
    """``p(x | z)``: angle uniform in the wedge around ``z``, radius from ``p(R)``.

    In Cartesian coordinates the density is ``1/((R1² − R0²) α0)`` on the
    wedge segment of the annulus.
    """

    alpha0: float = np.deg2rad(5.0)
    target: DonutTarget = DONUT
    target_dim: int = 2
    condition_dim: int = 1

    def log_prob(self, x, z):
        z = np.asarray(z, dtype=float)[..., 0]
        x = _pt2(x)
        ok = self.target.inside(x) & (circular_distance(arg(x), z) <= self.alpha0)
        return np.where(ok, -np.log(self.target.area_factor * self.alpha0), -np.inf)

    def sample(self, z, rng):
        z = np.asarray(z, dtype=float)[..., 0]
        a = z + rng.uniform(-self.alpha0, self.alpha0, size=np.shape(z))
        r = self.target.radius_from_uniform(rng.random(np.shape(z)))
        return np.stack([r * np.cos(a), r * np.sin(a)], axis=-1)
