"""Split flows: a deterministic encoder plus a stochastic decoder that only
places mass on the encoder's fiber.

The density factorizes into the probability of the fiber a point falls into
and the conditional density along that fiber:

    log p(x) = log p(F(f(x))) + log p(x | F(f(x)))

Fiber conditionals are built over an explicit parameterization of the fiber
(an affine subspace, a ray, a single point), so they cannot leak mass into
other fibers.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .bijective import FlowMap, InverseMap, ModelDegeneracyError
from .core.integrate import quad_integrate_1d
from .core.jacobian import jacobian
from .core.linalg import RankDeficiencyError, half_logdet_gram
from .core.report import CovReport, masked_terms
from .injective import LinearBottleneck

# --------------------------------------------------------------------------
# fiber conditionals


class RadialFiber:
    """Along the ray at angle ``z``: ``log p(x | F(z)) = log p_R(‖x‖) − log ‖x‖``.

    ``radial_log_prob`` is a 1-D density on radii; dividing by ``‖x‖``
    converts it to a density on the plane restricted to the ray (polar area
    element).
    """

    def __init__(self, radial_log_prob: Callable, radial_sampler: Callable):
        self.radial_log_prob = radial_log_prob
        self.radial_sampler = radial_sampler

    def log_prob(self, x, z):
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        with np.errstate(divide="ignore"):
            return self.radial_log_prob(r) - np.log(r)

    def sample(self, z, rng):
        z = np.asarray(z, dtype=float)[..., 0]
        r = self.radial_sampler(np.shape(z), rng)
        return np.stack([r * np.cos(z), r * np.sin(z)], axis=-1)


class AffineFiber:
    """Fiber ``{g(z) + U u}`` with orthonormal ``U`` and a kernel ``p(u | z)``."""

    def __init__(self, base: Callable, U, kernel, atol: float = 1e-9):
        self.base = base
        self.U = np.atleast_2d(np.asarray(U, dtype=float))
        if not np.allclose(self.U.T @ self.U, np.eye(self.U.shape[1]), atol=1e-10):
            raise ValueError("fiber directions must be orthonormal")
        self.kernel = kernel
        self.atol = atol

    def log_prob(self, x, z):
        x = np.asarray(x, dtype=float)
        d = x - np.asarray(self.base(z), dtype=float)
        u = d @ self.U
        resid = np.linalg.norm(d - u @ self.U.T, axis=-1)
        on = resid <= self.atol * (1.0 + np.linalg.norm(x, axis=-1))
        return np.where(on, self.kernel.log_prob(u, z), -np.inf)

    def sample(self, z, rng):
        u = self.kernel.sample(np.asarray(z, dtype=float), rng)
        return np.asarray(self.base(z), dtype=float) + u @ self.U.T


class DeltaFiber:
    """All fiber mass at the representative ``g(z)``: an injective model.

    ``log_prob`` returns 0 (the point mass) on the representative and
    ``-inf`` elsewhere, so the split CoV reduces to the core term on ``M``.
    """

    def __init__(self, decoder: Callable, rtol: float = 1e-8):
        self.decoder = decoder
        self.rtol = rtol

    def log_prob(self, x, z):
        x = np.asarray(x, dtype=float)
        d = np.linalg.norm(x - np.asarray(self.decoder(z), dtype=float), axis=-1)
        return np.where(d <= self.rtol * (1.0 + np.linalg.norm(x, axis=-1)), 0.0, -np.inf)

    def sample(self, z, rng):
        return np.asarray(self.decoder(z), dtype=float)


@dataclass
class SplitModel:
    """Core encoder ``f``, core mass ``log p(F(z))`` and a fiber conditional."""

    encoder: Callable
    core_log_mass: Callable
    fiber: object
    support: Callable | None = None  # optional mask of points the model covers

    def sample(self, n, core_sampler: Callable, rng):
        z = core_sampler(n, rng)
        return self.fiber.sample(z, rng), z


def cov_split(model: SplitModel, x) -> CovReport:
    """``log p(F(f(x))) + log p(x | F(f(x)))``; ``-inf`` off the declared support."""
    x = np.asarray(x, dtype=float)
    ok = np.ones(x.shape[:-1], dtype=bool) if model.support is None else np.asarray(model.support(x), dtype=bool)
    z = np.asarray(model.encoder(x), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = {"log_core_mass": model.core_log_mass(z), "log_fiber": model.fiber.log_prob(x, z)}
    return CovReport(masked_terms(ok, terms), formula="split")


# --------------------------------------------------------------------------
# piecewise constant


class PiecewiseConstantModel:
    """Uniform density on each facet: ``log p(Z=k) − log |F(k)|``."""

    def __init__(self, assign: Callable, log_masses, volumes):
        volumes = np.asarray(volumes, dtype=float)
        if np.any(~np.isfinite(volumes)) or np.any(volumes <= 0):
            raise ValueError("every facet needs a finite positive volume")
        masses = np.exp(np.asarray(log_masses, dtype=float))
        if abs(masses.sum() - 1.0) > 1e-9:
            raise ValueError("facet masses must sum to 1")
        self.assign = assign
        self.log_masses = np.asarray(log_masses, dtype=float)
        self.log_volumes = np.log(volumes)

    @classmethod
    def from_histogram(cls, edges: Sequence, masses) -> "PiecewiseConstantModel":
        """Rectilinear grid of bins; ``masses`` has one entry per bin."""
        edges = [np.asarray(e, dtype=float) for e in edges]
        for e in edges:
            if np.any(~np.isfinite(e)) or np.any(np.diff(e) <= 0):
                raise ValueError("histogram edges must be finite and increasing")
        masses = np.asarray(masses, dtype=float)
        shape = tuple(len(e) - 1 for e in edges)
        masses = masses.reshape(shape)
        widths = np.ones(shape)
        for d, e in enumerate(edges):
            w = np.diff(e).reshape([-1 if i == d else 1 for i in range(len(edges))])
            widths = widths * w

        def assign(x):
            x = np.asarray(x, dtype=float)
            if x.ndim == 0 or (len(edges) == 1 and x.shape[-1:] != (1,)):
                x = x[..., None]
            idx = []
            inside = np.ones(x.shape[:-1], dtype=bool)
            for d, e in enumerate(edges):
                i = np.searchsorted(e, x[..., d], side="right") - 1
                inside &= (i >= 0) & (i < len(e) - 1)
                idx.append(np.clip(i, 0, len(e) - 2))
            flat = np.ravel_multi_index(tuple(idx), shape)
            return np.where(inside, flat, -1)

        with np.errstate(divide="ignore"):
            lm = np.log(masses.ravel())
        return cls(assign, lm, widths.ravel())

    @classmethod
    def from_codebook(cls, codebook, lo, hi, n: int, rng) -> "PiecewiseConstantModel":
        """Voronoi facets clipped to the box ``[lo, hi]``; volumes by MC."""
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        pts = lo + (hi - lo) * rng.random((n, lo.size))
        counts = np.bincount(codebook.encode(pts), minlength=codebook.K)
        vol = np.prod(hi - lo) * counts / n

        def assign(x):
            x = np.asarray(x, dtype=float)
            inside = np.all((x >= lo) & (x <= hi), axis=-1)
            return np.where(inside, codebook.encode(x), -1)

        with np.errstate(divide="ignore"):
            return cls(assign, np.log(codebook.priors), vol)


def cov_piecewise_constant(model: PiecewiseConstantModel, x) -> CovReport:
    k = np.asarray(model.assign(x))
    ok = k >= 0
    kk = np.where(ok, k, 0)
    terms = {"log_facet_mass": model.log_masses[kk], "neg_log_facet_volume": -model.log_volumes[kk]}
    return CovReport(masked_terms(ok, terms), formula="piecewise_constant")


# --------------------------------------------------------------------------
# linear split


def cov_linear_split(lb: LinearBottleneck, prior, null_conditional, x) -> CovReport:
    """``log p(Z=W⁺x) − ½ log|det WᵀW| + log p(Z_⊥ = U_⊥ᵀx | Z = W⁺x)``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(lb.inverse(x), dtype=float)
    zp = lb.nullspace_coords(x)
    return CovReport(
        {
            "log_prior": prior.log_prob(z),
            "neg_half_log_det_gram": np.full(z.shape[:-1], -lb.half_logdet_gram),
            "log_nullspace": null_conditional.log_prob(zp, z),
        },
        formula="linear_split",
    )


# --------------------------------------------------------------------------
# split normalizing flow


@dataclass
class SplitNf:
    """Bijection ``φ`` on ``R^D`` whose encoder output splits into core (first
    ``core_dim`` coordinates) and detail; the core gets its own flow ``ψ_c``
    onto noise ``S_c`` and the detail a conditional flow ``ψ_d(·; z_c)``
    onto noise ``S_d``.

    All maps follow the package convention: ``forward`` generates
    (noise → code → data) and ``inverse`` encodes.
    """

    phi: FlowMap
    core_dim: int
    psi_c: FlowMap
    noise_c: object
    psi_d: object  # conditional bijection: forward(s_d, z_c), inverse(z_d, z_c)
    noise_d: object

    def encode_core(self, x):
        return np.asarray(self.phi.inverse(np.asarray(x, dtype=float)), dtype=float)[..., : self.core_dim]

    def manifold_point(self, zc):
        """``g(z_c, 0)``: the decoder manifold obtained by zeroing the detail."""
        zc = np.asarray(zc, dtype=float)
        pad = np.zeros(zc.shape[:-1] + (self.phi.dim_in - self.core_dim,))
        return np.asarray(self.phi.forward(np.concatenate([zc, pad], axis=-1)), dtype=float)


def cov_split_nf(model: SplitNf, x) -> CovReport:
    """Five-term split-NF CoV (three determinants, two noise densities)."""
    x = np.asarray(x, dtype=float)
    ok = model.phi.in_domain(x)
    xs = np.where(ok[..., None], x, np.asarray(model.phi.forward(np.full(model.phi.dim_in, 0.5))))
    z = np.asarray(model.phi.inverse(xs), dtype=float)
    C = model.core_dim
    zc, zd = z[..., :C], z[..., C:]
    sc = np.asarray(model.psi_c.inverse(zc), dtype=float)
    sd = np.asarray(model.psi_d.inverse(zd, zc), dtype=float)
    terms = {
        "log_det_phi": model.phi.log_abs_det_inverse(xs),
        "log_det_core": model.psi_c.log_abs_det_inverse(zc),
        "log_det_detail": -np.asarray(model.psi_d.log_abs_det_forward(sd, zc)),
        "log_noise_core": model.noise_c.log_prob(sc),
        "log_noise_detail": model.noise_d.log_prob(sd),
    }
    for k, v in terms.items():
        if np.any(~np.isfinite(v) & ok & (k.startswith("log_det"))):
            raise ModelDegeneracyError(f"singular constituent: {k}")
    return CovReport(masked_terms(ok, terms), formula="split_nf")


# --------------------------------------------------------------------------
# hierarchical decomposition

CodeTree = Union[int, tuple]


def tree_dims(node: CodeTree) -> list[int]:
    if isinstance(node, (int, np.integer)):
        return [int(node)]
    if len(node) != 2:
        raise ValueError("code trees are binary")
    return tree_dims(node[0]) + tree_dims(node[1])


def validate_tree(tree: CodeTree, dim: int) -> None:
    dims = tree_dims(tree)
    if sorted(dims) != list(range(dim)):
        raise ValueError(f"tree leaves {dims} do not partition 0..{dim - 1}")


def _interior_nodes(node):
    if isinstance(node, (int, np.integer)):
        return []
    return [node] + _interior_nodes(node[0]) + _interior_nodes(node[1])


def node_manifold_log_density(Jg, z, prior, dims):
    """``log p(Z_S = z_S) − ½ log det(J_Sᵀ J_S)`` with ``J_S`` the columns ``S`` of ``J_g``."""
    J = Jg[..., :, list(dims)]
    try:
        hl = half_logdet_gram(J)
    except RankDeficiencyError as exc:
        raise ModelDegeneracyError(f"restricted Jacobian on dims {list(dims)} is rank deficient") from exc
    return prior.marginal_log_prob(z, dims) - hl


def _codes_and_decoder_jacobian(flow, x):
    x = np.asarray(x, dtype=float)
    z = np.asarray(flow.inverse(x), dtype=float)
    return z, jacobian(flow, z)


def pointwise_mi(node: CodeTree, flow: FlowMap, prior, x):
    """Excess log-density of a node's manifold density over its two children."""
    z, Jg = _codes_and_decoder_jacobian(flow, x)
    return _pmi(node, Jg, z, prior)


def _pmi(node, Jg, z, prior):
    left, right = node
    return (
        node_manifold_log_density(Jg, z, prior, tree_dims(node))
        - node_manifold_log_density(Jg, z, prior, tree_dims(left))
        - node_manifold_log_density(Jg, z, prior, tree_dims(right))
    )


def cov_hierarchical(tree: CodeTree, flow: FlowMap, prior, x) -> CovReport:
    """Sum of leaf manifold densities plus the pointwise mutual information of
    every interior node; the terms telescope to the bijective CoV for any tree.

    The leaf term of coordinate ``j`` is ``log p(Z_j = z_j) − log‖J_g[:, j]‖``.
    When the encoder Jacobian has orthogonal rows this equals
    ``log p(Z_j) + log‖J_f[j, :]‖``.
    """
    validate_tree(tree, flow.dim_in)
    z, Jg = _codes_and_decoder_jacobian(flow, x)
    terms = {}
    for j in tree_dims(tree):
        terms[f"leaf_{j}"] = node_manifold_log_density(Jg, z, prior, [j])
    for node in _interior_nodes(tree):
        terms[f"mi_{_label(node)}"] = _pmi(node, Jg, z, prior)
    return CovReport(terms, formula="hierarchical")


def _label(node):
    if isinstance(node, (int, np.integer)):
        return str(int(node))
    return "(" + ",".join(_label(c) for c in node) + ")"


# --------------------------------------------------------------------------
# disentangled flows


def _encoder_rows(flow, x):
    return jacobian(InverseMap(flow), np.asarray(x, dtype=float))


def check_orthogonal_rows(flow: FlowMap, x) -> float:
    """``max |offdiag(J_f J_fᵀ)| / max diag`` over the given points."""
    J = _encoder_rows(flow, x)
    G = J @ np.swapaxes(J, -1, -2)
    d = np.diagonal(G, axis1=-2, axis2=-1)
    off = G - d[..., None] * np.eye(G.shape[-1])
    return float(np.max(np.abs(off)) / np.max(np.abs(d)))


class OrthogonalityError(ValueError):
    pass


def cov_disentangled(flow: FlowMap, prior, x, core_dim: int | None = None, tol: float = 1e-8) -> CovReport:
    """``Σ_j [log p(Z_j = f_j(x)) + log‖J_f(x)_j‖]``, split into core and detail sums."""
    x = np.asarray(x, dtype=float)
    ratio = check_orthogonal_rows(flow, x)
    if ratio > tol:
        raise OrthogonalityError(f"encoder Jacobian rows are not orthogonal (ratio {ratio:.3g})")
    J = _encoder_rows(flow, x)
    z = np.asarray(flow.inverse(x), dtype=float)
    per = prior.log_prob_dims(z) + np.log(np.linalg.norm(J, axis=-1))
    C = flow.dim_in if core_dim is None else core_dim
    return CovReport({"core": np.sum(per[..., :C], axis=-1), "detail": np.sum(per[..., C:], axis=-1)}, formula="disentangled")


def row_norm_ranking(flow: FlowMap, samples) -> tuple[np.ndarray, np.ndarray]:
    """Mean encoder row norms ``E‖J_f(x)_j‖`` and dimensions sorted by them (largest first)."""
    J = _encoder_rows(flow, samples)
    m = np.mean(np.linalg.norm(J, axis=-1), axis=0)
    return m, np.argsort(-m, kind="stable")


def noise_stability(flow: FlowMap, samples, sigmas=(0.01, 0.1), rng=None) -> dict:
    """Mean row norms after adding Gaussian noise of each ``σ`` to the samples."""
    samples = np.asarray(samples, dtype=float)
    out = {}
    for s in sigmas:
        noisy = samples + s * rng.standard_normal(samples.shape)
        out[float(s)] = row_norm_ranking(flow, noisy)[0]
    return out


def core_dims(flow: FlowMap, samples, eps: float) -> np.ndarray:
    """Dimensions whose mean row norm exceeds the user threshold ``eps``."""
    m, _ = row_norm_ranking(flow, samples)
    return np.flatnonzero(m > eps)


# --------------------------------------------------------------------------
# Gibbs fiber conditional


@dataclass(frozen=True)
class CurveFiber:
    """A 1-D fiber ``u ↦ point(u)`` for ``u ∈ [lo, hi]``; ``locate`` maps back."""

    point: Callable
    lo: float
    hi: float
    locate: Callable | None = None
    speed: Callable | None = None  # ‖dγ/du‖; numeric if omitted

    def arc_speed(self, u):
        if self.speed is not None:
            return self.speed(u)
        J = jacobian(lambda v: self.point(v[..., 0]), np.atleast_1d(np.asarray(u, dtype=float))[..., None])
        return np.linalg.norm(J[..., 0], axis=-1)


def radial_fiber(angle: float, r0: float, r1: float) -> CurveFiber:
    c, s = np.cos(angle), np.sin(angle)
    from .core import dual as dm

    return CurveFiber(
        point=lambda r: dm.stack([r * c, r * s]),
        lo=r0,
        hi=r1,
        locate=lambda x: np.linalg.norm(np.asarray(x, dtype=float), axis=-1),
        speed=lambda r: np.ones(np.shape(r)),
    )


class GibbsFiberConditional:
    """``p(x | fiber) ∝ exp(−‖x − x̂‖² / T)`` w.r.t. arc length along the fiber.

    The normalizer ``B`` is a 1-D quadrature, memoized per (fiber,
    representative) behind a lock so instances can be shared across threads.
    """

    def __init__(self, temperature: float, tol: float = 1e-12):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.T = float(temperature)
        self.tol = tol
        self._cache: dict = {}
        self._lock = threading.Lock()

    def log_normalizer(self, fiber: CurveFiber, x_hat) -> float:
        x_hat = np.asarray(x_hat, dtype=float)
        key = (fiber, tuple(x_hat.tolist()))
        with self._lock:
            if key in self._cache:
                return self._cache[key]

        def integrand(u):
            p = np.asarray(fiber.point(np.asarray(u, dtype=float)), dtype=float)
            speed = float(np.ravel(fiber.arc_speed(u))[0])
            return float(np.exp(-np.sum((p - x_hat) ** 2) / self.T)) * speed

        B = quad_integrate_1d(integrand, fiber.lo, fiber.hi, self.tol)
        logB = float(np.log(B))
        with self._lock:
            self._cache[key] = logB
        return logB


def gibbs_fiber_conditional(g: GibbsFiberConditional, x, x_hat, fiber: CurveFiber) -> CovReport:
    """``−‖x − x̂‖²/T − log B``; ``-inf`` for points off the fiber."""
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    inside = np.ones(x.shape[:-1], dtype=bool)
    if fiber.locate is not None:
        u = np.asarray(fiber.locate(x), dtype=float)
        back = np.asarray(fiber.point(u), dtype=float)
        inside = (u >= fiber.lo) & (u <= fiber.hi) & (np.linalg.norm(back - x, axis=-1) <= 1e-9 * (1 + np.linalg.norm(x, axis=-1)))
    terms = {
        "neg_scaled_sq_dist": -np.sum((x - x_hat) ** 2, axis=-1) / g.T,
        "neg_log_normalizer": np.full(x.shape[:-1], -g.log_normalizer(fiber, x_hat)),
    }
    return CovReport(masked_terms(inside, terms), formula="gibbs_fiber")
