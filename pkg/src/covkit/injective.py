"""Bottleneck models with deterministic encoders.

An injective decoder ``g: R^C → R^D`` (``C < D``) only puts mass on its image
manifold ``M``; the densities here are densities *on* ``M`` with respect to its
C-dimensional volume, obtained from ``½ log det(J_gᵀ J_g)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .bijective import FlowMap, ModelDegeneracyError
from .core import dual as dm
from .core.jacobian import jacobian
from .core.linalg import RankDeficiencyError, half_logdet_gram, logdet_lu, pinv_left
from .core.report import CovReport

ON_MANIFOLD_RTOL = 1e-8


class OffManifoldError(ValueError):
    """The point is farther from the manifold than the projection tolerance."""

    def __init__(self, distance, tol):
        self.distance = distance
        super().__init__(f"point is off the manifold: distance {np.max(distance):.3g} exceeds tolerance {tol:.3g}")


def manifold_distance(decoder: FlowMap, x, encode: Callable | None = None):
    """``‖x − g(f(x))‖``."""
    x = np.asarray(x, dtype=float)
    enc = encode or decoder.inverse
    xm = np.asarray(decoder.forward(enc(x)), dtype=float)
    return np.linalg.norm(x - xm, axis=-1)


def check_on_manifold(decoder, x, encode=None, rtol=ON_MANIFOLD_RTOL):
    x = np.asarray(x, dtype=float)
    d = manifold_distance(decoder, x, encode)
    tol = rtol * (1.0 + np.linalg.norm(x, axis=-1))
    if np.any(d > tol):
        raise OffManifoldError(d, float(np.max(tol)))
    return d


def cov_autoencoder(decoder: FlowMap, prior, z) -> CovReport:
    """``log p(Z=z) − ½ log|det(J_gᵀ J_g)|``: the density at ``g(z)`` on ``M``."""
    z = np.asarray(z, dtype=float)
    J = jacobian(decoder, z)
    try:
        hl = half_logdet_gram(J)
    except RankDeficiencyError as exc:
        raise ModelDegeneracyError("decoder Jacobian is rank deficient") from exc
    return CovReport({"log_prior": prior.log_prob(z), "neg_half_log_det_gram": -np.asarray(hl)}, formula="autoencoder")


def hypothetical_encoder_cov(encoder, prior, x) -> CovReport:
    """``log p(Z=f(x)) + ½ log det(J_f J_fᵀ)``, the encoder-side analogue.

    It agrees with :func:`cov_autoencoder` on ``M`` but not off it; kept as a
    negative reference.
    """
    x = np.asarray(x, dtype=float)
    J = jacobian(encoder, x)
    G = J @ np.swapaxes(J, -1, -2)
    z = np.asarray(encoder(x) if callable(encoder) else encoder.forward(x), dtype=float)
    return CovReport({"log_prior": prior.log_prob(z), "half_log_det_gram": 0.5 * np.asarray(logdet_lu(G))}, formula="encoder_side")


# --------------------------------------------------------------------------
# linear bottleneck


class LinearBottleneck(FlowMap):
    """``g(z) = W z`` with ``W`` of shape ``D × C`` and full column rank."""

    def __init__(self, W):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if W.shape[0] < W.shape[1]:
            raise ValueError("bottleneck matrix must be tall (D ≥ C)")
        self.W = W
        self.dim_out, self.dim_in = W.shape
        self.W_pinv = pinv_left(W)
        U, lam, Vt = np.linalg.svd(W, full_matrices=True)
        C = self.dim_in
        self.U_par = U[:, :C]
        self.U_perp = U[:, C:]
        self.singular_values = lam
        self.V = Vt.T
        self.half_logdet_gram = float(np.sum(np.log(lam)))

    def forward(self, z):
        return dm.linear(z, self.W)

    def inverse(self, x):
        return dm.linear(x, self.W_pinv)

    def nullspace_coords(self, x):
        """``U_⊥ᵀ x``."""
        return np.asarray(x, dtype=float) @ self.U_perp


def cov_linear_autoencoder(lb: LinearBottleneck, prior, x) -> CovReport:
    """``log p(Z=W⁺x) − ½ log|det(WᵀW)|``."""
    z = np.asarray(lb.inverse(np.asarray(x, dtype=float)))
    return CovReport(
        {"log_prior": prior.log_prob(z), "neg_half_log_det_gram": np.full(z.shape[:-1], -lb.half_logdet_gram)},
        formula="linear_autoencoder",
    )


# --------------------------------------------------------------------------
# M-flow


class PaddedDecoder(FlowMap):
    """``g_D ∘ pad``: embed ``R^C`` into ``R^D`` by zero padding, then flow."""

    def __init__(self, gD: FlowMap, C: int):
        self.gD = gD
        self.dim_in = C
        self.dim_out = gD.dim_out

    def forward(self, z):
        pad = np.zeros(np.shape(dm.value(z))[:-1] + (self.dim_out - self.dim_in,))
        return self.gD.forward(dm.concatenate([z, pad]))

    def inverse(self, x):
        return self.gD.inverse(x)[..., : self.dim_in]


def cov_mflow(gC: FlowMap, gD: FlowMap, prior, z) -> CovReport:
    """``log p(z) − log|det J_{g_C}(z)| − ½ log|det(J̃ᵀJ̃)|`` at ``x_M = g_D(pad(g_C(z)))``."""
    z = np.asarray(z, dtype=float)
    zp = np.asarray(gC.forward(z), dtype=float)
    padded = PaddedDecoder(gD, gC.dim_out)
    Jt = jacobian(padded, zp)
    return CovReport(
        {
            "log_prior": prior.log_prob(z),
            "neg_log_det_core": -np.asarray(gC.log_abs_det_forward(z)),
            "neg_half_log_det_gram": -np.asarray(half_logdet_gram(Jt)),
        },
        formula="mflow",
    )


def mflow_point(gC, gD, z):
    return np.asarray(PaddedDecoder(gD, gC.dim_out).forward(np.asarray(gC.forward(np.asarray(z, dtype=float)))))


# --------------------------------------------------------------------------
# finite codebooks


@dataclass
class FiniteCodebook:
    """Representatives ``x̂_k`` with priors ``p(Z=k)``.

    With an ``embedding`` the nearest-representative search happens in that
    pre-code space; ``representatives`` then live there and ``lift`` maps them
    back to data space.
    """

    representatives: np.ndarray
    priors: np.ndarray
    embedding: Callable | None = None
    lift: Callable | None = None

    def __post_init__(self):
        R = np.asarray(self.representatives, dtype=float)
        if R.ndim == 1:
            R = R[:, None]
        self.representatives = R
        self.priors = np.asarray(self.priors, dtype=float)
        if self.priors.size != R.shape[0]:
            raise ValueError("need one prior per representative")
        if abs(self.priors.sum() - 1.0) > 1e-12 or np.any(self.priors < 0):
            raise ValueError("priors must be non-negative and sum to 1")
        d = np.sum((R[:, None, :] - R[None, :, :]) ** 2, axis=-1)
        if np.any(d[~np.eye(len(R), dtype=bool)] == 0):
            raise ValueError("representatives must be pairwise distinct")

    @property
    def K(self) -> int:
        return self.representatives.shape[0]

    def data_representatives(self) -> np.ndarray:
        if self.lift is None:
            return self.representatives
        return np.asarray(self.lift(self.representatives), dtype=float)

    def encode(self, x):
        """Nearest representative; ties go to the lowest index."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 and self.representatives.shape[1] == 1 and self.embedding is None:
            x = x[..., None]
        e = x if self.embedding is None else np.asarray(self.embedding(x), dtype=float)
        d = np.sum((e[..., None, :] - self.representatives) ** 2, axis=-1)
        return np.argmin(d, axis=-1)  # first minimum = lowest index

    def decode(self, k):
        return self.data_representatives()[np.asarray(k)]


class KMeansResult(NamedTuple):
    code: np.ndarray
    log_mass: np.ndarray  # log p(Z = f(x)), attributed to the representative
    on_representative: np.ndarray
    log_density: np.ndarray  # log mass at representatives, -inf elsewhere


def cov_kmeans(codebook: FiniteCodebook, x, atol: float = 1e-12) -> KMeansResult:
    """Mixture of point masses: ``p(Z=f(x))`` sits on ``x̂_{f(x)}``, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    k = codebook.encode(x)
    reps = codebook.data_representatives()
    xx = x[..., None] if x.ndim == 1 and reps.shape[1] == 1 else x
    on = np.linalg.norm(xx - reps[k], axis=-1) <= atol * (1.0 + np.linalg.norm(xx, axis=-1))
    with np.errstate(divide="ignore"):
        lm = np.log(codebook.priors[k])
    return KMeansResult(k, lm, on, np.where(on, lm, -np.inf))


def estimate_facet_prior(codebook: FiniteCodebook, samples, laplace: float = 0.0) -> np.ndarray:
    """Fraction of samples encoded to each code (optionally Laplace smoothed)."""
    k = codebook.encode(samples)
    counts = np.bincount(np.ravel(k), minlength=codebook.K).astype(float) + laplace
    return counts / counts.sum()


# --------------------------------------------------------------------------
# charted manifolds


@dataclass
class ChartedManifold:
    """A chart ``φ: R^C → R^D`` with left inverse, optional conformal factor and volume."""

    chart: FlowMap
    conformal_factor: Callable | None = None
    volume: float | None = None

    @property
    def dim(self) -> int:
        return self.chart.dim_in

    def project(self, x):
        """``φ⁺(x)``."""
        return np.asarray(self.chart.inverse(np.asarray(x, dtype=float)), dtype=float)


def circle_chart_manifold(radius: float) -> ChartedManifold:
    from .analytic import CircleDecoder

    return ChartedManifold(CircleDecoder(radius), conformal_factor=lambda zt: np.full(np.shape(zt)[:-1], radius), volume=2 * np.pi * radius)


def cov_manifold_flow(man: ChartedManifold, flow: FlowMap, prior, x) -> CovReport:
    """``log p(Z=f(φ⁺x)) − ½ log|det J_φᵀJ_φ| + log|det J_f(φ⁺x)|``.

    ``flow`` is a bijection whose ``inverse`` is the chart-to-code map ``f``.
    """
    x = np.asarray(x, dtype=float)
    check_on_manifold(man.chart, x)
    zt = man.project(x)
    z = np.asarray(flow.inverse(zt), dtype=float)
    J = jacobian(man.chart, zt)
    return CovReport(
        {
            "log_prior": prior.log_prob(z),
            "neg_half_log_det_gram": -np.asarray(half_logdet_gram(J)),
            "log_det_flow": np.asarray(flow.log_abs_det_inverse(zt)),
        },
        formula="manifold_flow",
    )


class ConformalityError(ValueError):
    pass


def check_conformal(man: ChartedManifold, zt, rtol: float = 1e-6):
    """Verify ``JᵀJ = λ² I`` at chart coordinates ``zt``; returns ``λ``."""
    if man.conformal_factor is None:
        raise ConformalityError("manifold has no conformal factor")
    zt = np.asarray(zt, dtype=float)
    J = jacobian(man.chart, zt)
    G = np.swapaxes(J, -1, -2) @ J
    lam = np.asarray(man.conformal_factor(zt), dtype=float)
    target = lam[..., None, None] ** 2 * np.eye(man.dim)
    dev = np.linalg.norm(G - target, axis=(-2, -1)) / np.linalg.norm(target, axis=(-2, -1))
    if np.any(dev > rtol):
        raise ConformalityError(f"chart is not conformal here: relative deviation {np.max(dev):.3g}")
    return lam


def cov_conformal(man: ChartedManifold, flow: FlowMap, prior, x) -> CovReport:
    """``log p(Z=f(φ⁺x)) − C log λ(φ⁺x) + log|det J_f|``."""
    x = np.asarray(x, dtype=float)
    check_on_manifold(man.chart, x)
    zt = man.project(x)
    lam = check_conformal(man, zt)
    z = np.asarray(flow.inverse(zt), dtype=float)
    return CovReport(
        {
            "log_prior": prior.log_prob(z),
            "neg_conformal_term": -man.dim * np.log(lam),
            "log_det_flow": np.asarray(flow.log_abs_det_inverse(zt)),
        },
        formula="conformal",
    )


@dataclass
class ConformalAtlas:
    """Several conformal charts with a nearest-representative chart assigner."""

    charts: Sequence[ChartedManifold]
    flows: Sequence[FlowMap]
    priors: np.ndarray
    representatives: np.ndarray

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=float)
        self.representatives = np.atleast_2d(np.asarray(self.representatives, dtype=float))
        if not (len(self.charts) == len(self.flows) == self.priors.size == len(self.representatives)):
            raise ValueError("need one chart, flow, prior and representative per cluster")
        if abs(self.priors.sum() - 1) > 1e-12:
            raise ValueError("chart priors must sum to 1")

    def assign(self, x):
        x = np.asarray(x, dtype=float)
        d = np.sum((x[..., None, :] - self.representatives) ** 2, axis=-1)
        return np.argmin(d, axis=-1)


def cov_conformal_vq(atlas: ConformalAtlas, prior, x) -> CovReport:
    """``log p(h(x))`` plus the conformal CoV of the assigned chart."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = atlas.assign(x)
    n = len(x)
    out = {"log_chart_prior": np.log(atlas.priors[k]), "log_prior": np.zeros(n), "neg_conformal_term": np.zeros(n), "log_det_flow": np.zeros(n)}
    for c in range(len(atlas.charts)):
        m = k == c
        if not np.any(m):
            continue
        rep = cov_conformal(atlas.charts[c], atlas.flows[c], prior, x[m])
        for key, v in rep.terms.items():
            out[key][m] = v
    return CovReport(out, formula="conformal_vq")


def cov_softflow(cond_flow, prior, x, sigma_min: float) -> CovReport:
    """``log p(Z=f(x; σ)) + log|det J_f(x; σ)|`` at the noise floor ``σ = σ_min``.

    ``cond_flow.inverse(x, c)`` is the encoder conditioned on the noise level.
    """
    if sigma_min <= 0:
        raise ValueError("sigma_min must be positive")
    x = np.asarray(x, dtype=float)
    c = np.full(x.shape[:-1] + (1,), float(sigma_min))
    z = np.asarray(cond_flow.inverse(x, c), dtype=float)
    J = jacobian(lambda u: cond_flow.inverse(u, c), x)
    return CovReport({"log_prior": prior.log_prob(z), "log_det_encoder": np.asarray(logdet_lu(J))}, formula="softflow")
