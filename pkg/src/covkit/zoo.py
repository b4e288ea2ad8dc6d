"""Ready-made models of all four kinds for the two analytic targets.

``gauss4`` builds bijective, injective, stochastic and split models of the
anisotropic Gaussian ``N(0, diag(1, 1/4))``; ``donut4`` does the same for the
uniform annulus. A few further donut constructions (split NF, polar
disentangled flow, two-cluster VQ flow, conformal atlas) live here as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic import (
    DONUT,
    TWO_PI,
    AnisotropicGaussian,
    CircleDecoder,
    DonutNF,
    DonutTarget,
    DonutVaeDecoder,
    DonutVaeEncoder,
    arg,
)
from .bijective import Affine, Composite, Elementwise, FlowMap, Identity, Polar, ScalarBijection, VqFlowModel
from .core import dual as dm
from .distributions import DiagonalGaussian, StandardNormal, UniformBox
from .injective import ChartedManifold, ConformalAtlas, LinearBottleneck
from .kernels import AffineGaussianKernel, IndependentKernel
from .split import AffineFiber, RadialFiber, SplitModel, SplitNf
from .stochastic import ConditionalBijection

LOG_2PI = float(np.log(TWO_PI))


@dataclass
class StochasticPair:
    prior: object
    encoder: object
    decoder: object


@dataclass
class FourWay:
    target: object
    bijective: FlowMap
    bijective_prior: object
    injective: FlowMap
    injective_prior: object
    stochastic: StochasticPair
    split: SplitModel
    split_core_sampler: object


# --------------------------------------------------------------------------
# Gaussian


def gauss_bijective() -> Affine:
    """Decoder ``[z1, z2/2]``; encoder ``[x1, 2 x2]``."""
    return Affine(np.diag([1.0, 0.5]))


def gauss_injective() -> LinearBottleneck:
    """Decoder ``z ↦ [z, 0]``; encoder ``x ↦ x1``."""
    return LinearBottleneck([[1.0], [0.0]])


def gauss_stochastic(rho: float) -> StochasticPair:
    """Jointly Gaussian ``(x1, z)`` with correlation ``ρ``; ``x2`` independent."""
    if not -1 < rho < 1:
        raise ValueError("correlation must lie in (−1, 1)")
    s = np.sqrt(1.0 - rho * rho)
    dec = AffineGaussianKernel([[rho], [0.0]], [0.0, 0.0], [s, 0.5])
    enc = AffineGaussianKernel([[rho, 0.0]], [0.0], [s])
    return StochasticPair(StandardNormal(1), enc, dec)


def gauss_split() -> SplitModel:
    """``x1 = z`` deterministically decoded; ``x2 ~ N(0, 1/4)`` along the fiber."""
    lb = gauss_injective()
    prior = StandardNormal(1)
    detail = IndependentKernel(DiagonalGaussian([0.0], [0.5]), 1)
    fiber = AffineFiber(lambda z: np.asarray(lb.forward(np.asarray(z, dtype=float))), [[0.0], [1.0]], detail)
    return SplitModel(
        encoder=lambda x: np.asarray(x, dtype=float)[..., :1],
        core_log_mass=prior.log_prob,
        fiber=fiber,
    )


def gauss4(rho: float = 0.5) -> FourWay:
    return FourWay(
        target=AnisotropicGaussian(),
        bijective=gauss_bijective(),
        bijective_prior=StandardNormal(2),
        injective=gauss_injective(),
        injective_prior=StandardNormal(1),
        stochastic=gauss_stochastic(rho),
        split=gauss_split(),
        split_core_sampler=lambda n, rng: rng.standard_normal((n, 1)),
    )


# --------------------------------------------------------------------------
# donut


def donut_split(target: DonutTarget = DONUT) -> SplitModel:
    """Angle as core code (uniform), radius redrawn from ``p(R)`` along the ray."""
    fiber = RadialFiber(target.radial_log_prob, lambda shape, rng: target.sample_radius(int(np.prod(shape)), rng).reshape(shape))
    return SplitModel(
        encoder=lambda x: arg(x)[..., None],
        core_log_mass=lambda z: np.full(np.shape(z)[:-1], -LOG_2PI),
        fiber=fiber,
        support=target.inside,
    )


def donut_stochastic(alpha0_deg: float = 5.0, target: DonutTarget = DONUT) -> StochasticPair:
    a0 = float(np.deg2rad(alpha0_deg))
    return StochasticPair(UniformBox([0.0], [TWO_PI]), DonutVaeEncoder(a0), DonutVaeDecoder(a0, target))


def donut4(alpha0_deg: float = 5.0, target: DonutTarget = DONUT) -> FourWay:
    return FourWay(
        target=target,
        bijective=DonutNF(target),
        bijective_prior=StandardNormal(2),
        injective=CircleDecoder(target.manifold_radius),
        injective_prior=UniformBox([0.0], [TWO_PI]),
        stochastic=donut_stochastic(alpha0_deg, target),
        split=donut_split(target),
        split_core_sampler=lambda n, rng: TWO_PI * rng.random((n, 1)),
    )


def donut_polar_flow(target: DonutTarget = DONUT) -> Composite:
    """Bijection from codes ``(θ, u) ∈ (0, 2π) × (0, 1)`` onto the annulus.

    Its encoder ``x ↦ (arg x, radial CDF(‖x‖))`` has orthogonal Jacobian rows.
    Pair it with the uniform prior :func:`donut_polar_prior`.
    """
    return Composite(
        [
            Elementwise([ScalarBijection.identity(0.0, TWO_PI), ScalarBijection.cdf_radius(target.r0, target.r1)]),
            Polar(),
        ]
    )


def donut_polar_prior() -> UniformBox:
    return UniformBox([0.0, 0.0], [TWO_PI, 1.0])


def donut_split_nf(target: DonutTarget = DONUT) -> SplitNf:
    """Polar coordinates as ``φ``; core = angle (uniform noise), detail = radius
    pushed to uniform noise through its CDF."""
    a, r0 = target.area_factor, target.r0
    psi_d = ConditionalBijection(
        fwd=lambda s, c: dm.sqrt(s * a + r0 * r0),
        inv=lambda r, c: (r * r - r0 * r0) / a,
        dim=1,
        cond_dim=1,
    )
    return SplitNf(
        phi=Polar(),
        core_dim=1,
        psi_c=Identity(1),
        noise_c=UniformBox([0.0], [TWO_PI]),
        psi_d=psi_d,
        noise_d=UniformBox([0.0], [1.0]),
    )


def half_annulus_flow(theta0: float, target: DonutTarget = DONUT) -> Composite:
    """Standard-normal codes onto the half annulus with angles in ``(θ0, θ0 + π)``."""
    return Composite(
        [
            Elementwise([ScalarBijection.gaussian_to_interval(theta0, theta0 + np.pi), ScalarBijection.gaussian_to_interval(0.0, 1.0)]),
            Elementwise([ScalarBijection.identity(theta0, theta0 + np.pi), ScalarBijection.cdf_radius(target.r0, target.r1)]),
            Polar(),
        ]
    )


def donut_vq_flow(target: DonutTarget = DONUT) -> VqFlowModel:
    """Two clusters (upper and lower half annulus) with their own flows."""
    R = target.manifold_radius
    return VqFlowModel(
        representatives=[[0.0, R], [0.0, -R]],
        priors=[0.5, 0.5],
        flows=[half_annulus_flow(0.0, target), half_annulus_flow(np.pi, target)],
    )


class ArcChart(FlowMap):
    """Circle arc ``θ ↦ R(cos θ, sin θ)`` for ``θ ∈ [θ0, θ0 + π)`` with a matching left inverse."""

    def __init__(self, radius: float, theta0: float):
        self.radius, self.theta0 = float(radius), float(theta0)
        self.dim_in, self.dim_out = 1, 2

    def forward(self, z):
        t = z[..., 0]
        return dm.stack([self.radius * dm.cos(t), self.radius * dm.sin(t)])

    def inverse(self, x):
        t = dm.arctan2(x[..., 1], x[..., 0])
        t = dm.where(dm.value(t) < self.theta0 - 1e-12, t + TWO_PI, t)
        return dm.stack([t])


def circle_atlas(radius: float = DONUT.manifold_radius) -> tuple[ConformalAtlas, UniformBox]:
    """Upper/lower semicircle charts, identity chart flows, priors ½ each.

    Chart codes are shifted to ``[0, π)`` so both charts share the uniform
    code prior returned alongside.
    """
    lam = lambda zt: np.full(np.shape(zt)[:-1], radius)  # noqa: E731
    charts = [ChartedManifold(ArcChart(radius, 0.0), lam), ChartedManifold(ArcChart(radius, np.pi), lam)]
    flows = [Identity(1), Elementwise([ScalarBijection.affine(1.0, np.pi)])]
    atlas = ConformalAtlas(charts, flows, [0.5, 0.5], [[0.0, radius], [0.0, -radius]])
    return atlas, UniformBox([0.0], [np.pi])
