"""Finite-composition bijective flows and their change-of-variables evaluators.

Convention used throughout the package: a map's ``forward`` is the generative
direction (decoder, code → data) and ``inverse`` is the encoder (data → code).
Every ``forward``/``inverse`` here is written against :mod:`covkit.core.dual`
so the Jacobian engine can differentiate it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import dual as dm
from .core.jacobian import DUAL, DiffConfig, jacobian
from .core.linalg import logdet_lu, signed_logdet_lu
from .core.report import CovReport, masked_terms


class ModelDegeneracyError(ArithmeticError):
    """The model's Jacobian is singular at the evaluation point."""


class FlowMap:
    """A differentiable map ``R^dim_in → R^dim_out`` with optional inverse."""

    dim_in: int
    dim_out: int
    unit_det: bool = False

    def forward(self, z):
        raise NotImplementedError

    def inverse(self, x):
        raise NotImplementedError(f"{type(self).__name__} has no inverse")

    def __call__(self, z):
        return self.forward(z)

    def in_domain(self, x):
        """Mask of data points the inverse is defined on."""
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1], dtype=bool)

    def jacobian(self, z, cfg: DiffConfig = DUAL):
        return jacobian(self, z, cfg)

    def log_abs_det_forward(self, z):
        """``log|det J_g(z)|``; numeric fallback through the Jacobian engine."""
        if self.dim_in != self.dim_out:
            raise ValueError("determinant needs a square Jacobian")
        return logdet_lu(jacobian(self, z))

    def log_abs_det_inverse(self, x):
        """``log|det J_f(x)|`` for the encoder ``f = inverse``."""
        return -self.log_abs_det_forward(self.inverse(x))

    @property
    def layers(self) -> list["FlowMap"]:
        return [self]


class InverseMap(FlowMap):
    """View a map's encoder as a map in its own right (for Jacobians)."""

    def __init__(self, base: FlowMap):
        self.base = base
        self.dim_in = base.dim_out
        self.dim_out = base.dim_in

    def forward(self, x):
        return self.base.inverse(x)


@dataclass
class FunctionMap(FlowMap):
    """Wrap plain callables; ``log_det`` is optional (numeric fallback)."""

    fwd: Callable
    dim_in: int
    dim_out: int
    inv: Callable | None = None
    log_det: Callable | None = None
    domain: Callable | None = None
    unit_det: bool = False

    def forward(self, z):
        return self.fwd(z)

    def inverse(self, x):
        if self.inv is None:
            raise NotImplementedError("no inverse supplied")
        return self.inv(x)

    def log_abs_det_forward(self, z):
        if self.log_det is not None:
            return self.log_det(z)
        return super().log_abs_det_forward(z)

    def in_domain(self, x):
        if self.domain is None:
            return super().in_domain(x)
        return np.asarray(self.domain(np.asarray(x, dtype=float)), dtype=bool)


class Identity(FlowMap):
    unit_det = True

    def __init__(self, dim: int):
        self.dim_in = self.dim_out = dim

    def forward(self, z):
        return z

    def inverse(self, x):
        return x

    def log_abs_det_forward(self, z):
        return np.zeros(np.shape(dm.value(z))[:-1])


class Affine(FlowMap):
    """``x = W z + b`` with invertible ``W``."""

    def __init__(self, W, b=None):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if W.shape[0] != W.shape[1]:
            raise ValueError("affine flow layer needs a square matrix")
        self.W = W
        self.b = np.zeros(W.shape[0]) if b is None else np.asarray(b, dtype=float)
        self.dim_in = self.dim_out = W.shape[0]
        sign, ld = signed_logdet_lu(W)
        self._logdet = float(ld)
        self.W_inv = np.linalg.inv(W)
        self.unit_det = abs(self._logdet) < 1e-12

    def forward(self, z):
        return dm.linear(z, self.W, self.b)

    def inverse(self, x):
        return dm.linear(x - self.b, self.W_inv)

    def log_abs_det_forward(self, z):
        return np.full(np.shape(dm.value(z))[:-1], self._logdet)


class Orthogonal(Affine):
    """Rotation/reflection; certified unit determinant."""

    def __init__(self, Q, b=None):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if not np.allclose(Q.T @ Q, np.eye(Q.shape[0]), atol=1e-12, rtol=0):
            raise ValueError("matrix is not orthogonal")
        super().__init__(Q, b)
        self.unit_det = True
        self._logdet = 0.0

    @classmethod
    def rotation_2d(cls, angle: float) -> "Orthogonal":
        c, s = np.cos(angle), np.sin(angle)
        return cls([[c, -s], [s, c]])


class ActNorm(FlowMap):
    """Elementwise ``x = exp(log_scale) · z + shift``."""

    def __init__(self, log_scale, shift=None):
        self.log_scale = np.atleast_1d(np.asarray(log_scale, dtype=float))
        self.shift = np.zeros_like(self.log_scale) if shift is None else np.asarray(shift, dtype=float)
        self.dim_in = self.dim_out = self.log_scale.size
        self.unit_det = abs(self.log_scale.sum()) < 1e-12

    def forward(self, z):
        return z * np.exp(self.log_scale) + self.shift

    def inverse(self, x):
        return (x - self.shift) * np.exp(-self.log_scale)

    def log_abs_det_forward(self, z):
        return np.full(np.shape(dm.value(z))[:-1], float(self.log_scale.sum()))


class Permutation(FlowMap):
    """``x_i = z_{perm[i]}``."""

    unit_det = True

    def __init__(self, perm: Sequence[int]):
        perm = np.asarray(perm, dtype=int)
        if sorted(perm.tolist()) != list(range(perm.size)):
            raise ValueError("not a permutation")
        self.perm = perm
        self.inv_perm = np.argsort(perm)
        self.dim_in = self.dim_out = perm.size

    def forward(self, z):
        return z[..., self.perm]

    def inverse(self, x):
        return x[..., self.inv_perm]

    def log_abs_det_forward(self, z):
        return np.zeros(np.shape(dm.value(z))[:-1])


@dataclass
class Mlp:
    """One-hidden-layer ``tanh`` network used as a coupling conditioner."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.W1 = np.atleast_2d(np.asarray(self.W1, dtype=float))
        self.b1 = np.asarray(self.b1, dtype=float)
        self.W2 = np.atleast_2d(np.asarray(self.W2, dtype=float))
        self.b2 = np.asarray(self.b2, dtype=float)

    def __call__(self, u):
        return dm.linear(dm.tanh(dm.linear(u, self.W1, self.b1)), self.W2, self.b2)

    @classmethod
    def random(cls, rng, d_in, hidden, d_out, scale=0.5) -> "Mlp":
        return cls(
            scale * rng.standard_normal((hidden, d_in)),
            scale * rng.standard_normal(hidden),
            scale * rng.standard_normal((d_out, hidden)) / np.sqrt(hidden),
            scale * rng.standard_normal(d_out),
        )

    @classmethod
    def zeros(cls, d_in, d_out) -> "Mlp":
        return cls(np.zeros((1, d_in)), np.zeros(1), np.zeros((d_out, 1)), np.zeros(d_out))


class AffineCoupling(FlowMap):
    """Affine coupling: the first ``split`` coordinates pass through and the
    rest become ``exp(s(z_a)) ⊙ z_b + w(z_a)``.

    Scales are parameterized by their logarithm so they stay positive. With
    ``volume_preserving=True`` the log-scales are centred to sum to zero,
    which pins the determinant to one.
    """

    def __init__(self, dim: int, split: int, scale_net, shift_net, volume_preserving=False):
        if not 0 < split < dim:
            raise ValueError("split index must leave both halves non-empty")
        self.dim_in = self.dim_out = dim
        self.split = split
        self.scale_net = scale_net
        self.shift_net = shift_net
        self.volume_preserving = volume_preserving
        self.unit_det = volume_preserving

    def _log_scale(self, za):
        s = self.scale_net(za)
        if self.volume_preserving:
            s = s - dm.mean(s, axis=-1)[..., None]
        return s

    def forward(self, z):
        za, zb = z[..., : self.split], z[..., self.split :]
        xb = zb * dm.exp(self._log_scale(za)) + self.shift_net(za)
        return dm.concatenate([za, xb])

    def inverse(self, x):
        xa, xb = x[..., : self.split], x[..., self.split :]
        zb = (xb - self.shift_net(xa)) * dm.exp(-self._log_scale(xa))
        return dm.concatenate([xa, zb])

    def log_abs_det_forward(self, z):
        z = np.asarray(dm.value(z), dtype=float)
        return np.sum(self._log_scale(z[..., : self.split]), axis=-1)

    def log_abs_det_inverse(self, x):
        x = np.asarray(x, dtype=float)
        return -np.sum(self._log_scale(x[..., : self.split]), axis=-1)


@dataclass(frozen=True)
class ScalarBijection:
    """Strictly increasing 1-D bijection with analytic log-derivative."""

    fwd: Callable
    inv: Callable
    log_deriv: Callable  # log g'(u), evaluated at the code value u
    code_range: tuple[float, float] = (-np.inf, np.inf)
    data_range: tuple[float, float] = (-np.inf, np.inf)

    @classmethod
    def affine(cls, scale: float, shift: float = 0.0) -> "ScalarBijection":
        if scale <= 0:
            raise ValueError("scale must be positive")
        return cls(
            lambda u: scale * u + shift,
            lambda x: (x - shift) / scale,
            lambda u: np.full(np.shape(u), np.log(scale)),
        )

    @classmethod
    def identity(cls, lo=-np.inf, hi=np.inf) -> "ScalarBijection":
        return cls(lambda u: u, lambda x: x, lambda u: np.zeros(np.shape(u)), (lo, hi), (lo, hi))

    @classmethod
    def gaussian_to_interval(cls, lo: float, hi: float) -> "ScalarBijection":
        """``u ↦ lo + (hi − lo) Φ(u)``: standard normal onto a uniform interval."""
        w = hi - lo
        return cls(
            lambda u: lo + w * dm.norm_cdf(u),
            lambda x: dm.norm_ppf((x - lo) / w),
            lambda u: np.log(w) - 0.5 * np.asarray(u) ** 2 - 0.5 * np.log(2 * np.pi),
            (-np.inf, np.inf),
            (lo, hi),
        )

    @classmethod
    def cdf_radius(cls, r0: float, r1: float) -> "ScalarBijection":
        """``u ∈ (0,1) ↦ r = sqrt(u (r1² − r0²) + r0²)``: uniform onto the radial law ∝ r."""
        a = r1 * r1 - r0 * r0
        return cls(
            lambda u: dm.sqrt(u * a + r0 * r0),
            lambda r: (r * r - r0 * r0) / a,
            lambda u: np.log(a / 2.0) - 0.5 * np.log(np.asarray(u) * a + r0 * r0),
            (0.0, 1.0),
            (r0, r1),
        )


class Elementwise(FlowMap):
    """Apply one :class:`ScalarBijection` per coordinate."""

    def __init__(self, maps: Sequence[ScalarBijection]):
        self.maps = list(maps)
        self.dim_in = self.dim_out = len(self.maps)

    def forward(self, z):
        return dm.stack([m.fwd(z[..., i]) for i, m in enumerate(self.maps)])

    def inverse(self, x):
        return dm.stack([m.inv(x[..., i]) for i, m in enumerate(self.maps)])

    def log_abs_det_forward(self, z):
        z = np.asarray(dm.value(z), dtype=float)
        return np.sum([m.log_deriv(z[..., i]) for i, m in enumerate(self.maps)], axis=0)

    def in_domain(self, x):
        x = np.asarray(x, dtype=float)
        ok = np.ones(x.shape[:-1], dtype=bool)
        for i, m in enumerate(self.maps):
            lo, hi = m.data_range
            ok &= (x[..., i] > lo) & (x[..., i] < hi)
        return ok


class Polar(FlowMap):
    """``(θ, r) ↦ (r cos θ, r sin θ)`` with ``θ ∈ [0, 2π)``, ``r > 0``."""

    def __init__(self):
        self.dim_in = self.dim_out = 2

    def forward(self, z):
        th, r = z[..., 0], z[..., 1]
        return dm.stack([r * dm.cos(th), r * dm.sin(th)])

    def inverse(self, x):
        th = dm.arctan2(x[..., 1], x[..., 0])
        th = dm.where(dm.value(th) < 0, th + 2 * np.pi, th)
        return dm.stack([th, dm.norm(x)])

    def log_abs_det_forward(self, z):
        return np.log(np.asarray(dm.value(z), dtype=float)[..., 1])

    def in_domain(self, x):
        x = np.asarray(x, dtype=float)
        return np.hypot(x[..., 0], x[..., 1]) > 0


class Composite(FlowMap):
    """Layers applied in order on the generative path: ``g = L_n ∘ … ∘ L_1``."""

    def __init__(self, layers: Sequence[FlowMap]):
        layers = list(layers)
        if not layers:
            raise ValueError("need at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.dim_out != b.dim_in:
                raise ValueError("layer dimensions do not chain")
        self._layers = layers
        self.dim_in = layers[0].dim_in
        self.dim_out = layers[-1].dim_out
        self.unit_det = all(l.unit_det for l in layers)

    @property
    def layers(self):
        return list(self._layers)

    def forward(self, z):
        for l in self._layers:
            z = l.forward(z)
        return z

    def inverse(self, x):
        for l in reversed(self._layers):
            x = l.inverse(x)
        return x

    def layer_log_dets(self, z) -> list:
        out = []
        for l in self._layers:
            out.append(l.log_abs_det_forward(z))
            z = l.forward(z)
        return out

    def log_abs_det_forward(self, z):
        return np.sum(self.layer_log_dets(z), axis=0)

    def log_abs_det_inverse(self, x):
        total = 0.0
        for l in reversed(self._layers):
            total = total + l.log_abs_det_inverse(x)
            x = l.inverse(x)
        return total

    def in_domain(self, x):
        x = np.asarray(x, dtype=float)
        ok = np.ones(x.shape[:-1], dtype=bool)
        with np.errstate(all="ignore"):
            for l in reversed(self._layers):
                ok &= l.in_domain(x)
                x = np.where(ok[..., None], x, 0.0)
                x = np.asarray(l.inverse(x), dtype=float)
        return ok


class IncompressibleFlow(Composite):
    """Composite flow whose every layer certifies a unit determinant."""

    def __init__(self, layers):
        super().__init__(layers)
        bad = [type(l).__name__ for l in self._layers if not l.unit_det]
        if bad:
            raise ValueError(f"layers without unit determinant: {bad}")

    def log_abs_det_forward(self, z):
        return np.zeros(np.shape(dm.value(z))[:-1])

    def log_abs_det_inverse(self, x):
        return np.zeros(np.shape(x)[:-1])


# --------------------------------------------------------------------------
# triangular maps


@dataclass(frozen=True)
class TriangularComponent:
    """``x_j = fwd(z_j, x_prev)`` and ``z_j = inv(x_j, x_prev)``; increasing in ``z_j``."""

    fwd: Callable
    inv: Callable


class NonMonotoneError(ValueError):
    pass


class TriangularMap(FlowMap):
    """Knothe-Rosenblatt style map evaluated coordinate by coordinate."""

    def __init__(self, components: Sequence[TriangularComponent]):
        self.components = list(components)
        self.dim_in = self.dim_out = len(self.components)

    def forward(self, z):
        xs = []
        for j, c in enumerate(self.components):
            prev = dm.stack(xs) if xs else _empty_like(z)
            xs.append(c.fwd(z[..., j], prev))
        return dm.stack(xs)

    def inverse(self, x):
        zs = []
        for j, c in enumerate(self.components):
            zs.append(c.inv(x[..., j], x[..., :j]))
        return dm.stack(zs)

    def diagonal_derivatives(self, z):
        """``∂x_j/∂z_j`` for every coordinate, shape ``(..., D)``."""
        z = np.asarray(z, dtype=float)
        x = np.asarray(self.forward(z), dtype=float)
        out = []
        for j, c in enumerate(self.components):
            zj = dm.Dual(z[..., j], np.ones(z.shape[:-1] + (1,)))
            d = c.fwd(zj, x[..., :j])
            out.append(d.eps[..., 0] if isinstance(d, dm.Dual) else np.zeros(z.shape[:-1]))
        return np.stack(out, axis=-1)

    def log_abs_det_forward(self, z):
        diag = self.diagonal_derivatives(z)
        if np.any(diag <= 0):
            raise NonMonotoneError("triangular map is not increasing in its diagonal coordinate")
        return np.sum(np.log(diag), axis=-1)


def _empty_like(z):
    v = np.asarray(dm.value(z))
    return np.zeros(v.shape[:-1] + (0,))


def knothe_rosenblatt_apply(tmap: TriangularMap, z):
    """Sequential forward evaluation plus ``Σ log ∂g_j/∂z_j``."""
    z = np.asarray(z, dtype=float)
    return np.asarray(tmap.forward(z)), tmap.log_abs_det_forward(z)


def affine_autoregressive(log_diag, lower, bias=None) -> TriangularMap:
    """``x_j = exp(a_j) z_j + tanh(Σ_{i<j} C_ji x_i + b_j)``."""
    log_diag = np.asarray(log_diag, dtype=float)
    C = np.asarray(lower, dtype=float)
    D = log_diag.size
    b = np.zeros(D) if bias is None else np.asarray(bias, dtype=float)
    comps = []
    for j in range(D):
        a, row, bj = log_diag[j], C[j, :j].copy(), b[j]

        def fwd(zj, prev, a=a, row=row, bj=bj):
            return np.exp(a) * zj + dm.tanh(dm.sum(prev * row, axis=-1) + bj)

        def inv(xj, prev, a=a, row=row, bj=bj):
            return (xj - dm.tanh(dm.sum(prev * row, axis=-1) + bj)) * np.exp(-a)

        comps.append(TriangularComponent(fwd, inv))
    return TriangularMap(comps)


def coupling_stack(rng, dim: int, n_layers: int, hidden: int = 8, scale: float = 0.5) -> Composite:
    """Random affine couplings interleaved with reversing permutations."""
    layers: list[FlowMap] = []
    split = dim // 2
    for i in range(n_layers):
        layers.append(
            AffineCoupling(
                dim,
                split,
                Mlp.random(rng, split, hidden, dim - split, scale),
                Mlp.random(rng, split, hidden, dim - split, scale),
            )
        )
        if i < n_layers - 1:
            layers.append(Permutation(np.arange(dim)[::-1]))
    return Composite(layers)


# --------------------------------------------------------------------------
# change-of-variables evaluators


def _batched(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dim:
        raise ValueError(f"point has dim {x.shape[-1]}, model expects {dim}")
    return x


def cov_bijective(flow: FlowMap, prior, x, form: str = "encoder") -> CovReport:
    """``log p(x) = log p(Z=f(x)) + log|det J_f(x)|``.

    ``form`` picks how the determinant is obtained: ``"encoder"`` (layer
    formulas along the encoder path), ``"decoder"`` (``−log|det J_g(f(x))|``)
    or ``"jacobian"`` (LU of the dual-number Jacobian of ``f``). Points
    outside the flow's domain get ``-inf``.
    """
    x = _batched(x, flow.dim_out)
    ok = flow.in_domain(x)
    xs = np.where(ok[..., None], x, _safe_point(flow, x, ok))
    z = np.asarray(flow.inverse(xs), dtype=float)
    if form == "encoder":
        ld = flow.log_abs_det_inverse(xs)
    elif form == "decoder":
        ld = -flow.log_abs_det_forward(z)
    elif form == "jacobian":
        ld = logdet_lu(jacobian(InverseMap(flow), xs), raise_singular=False)
    else:
        raise ValueError(f"unknown form {form!r}")
    ld = np.asarray(ld, dtype=float)
    if np.any(~np.isfinite(ld) & ok):
        raise ModelDegeneracyError("singular flow Jacobian inside the domain")
    terms = {"log_prior": prior.log_prob(z), "log_det_encoder": ld}
    return CovReport(masked_terms(ok, terms), formula="bijective")


def _safe_point(flow, x, ok):
    # a point inside the domain used as a stand-in where x is not
    if np.all(ok):
        return x
    z0 = np.full(flow.dim_in, 0.5)
    return np.asarray(flow.forward(z0), dtype=float)


def cov_incompressible(flow: FlowMap, prior, x, atol: float = 1e-9) -> CovReport:
    """``log p(x) = log p(Z=f(x))`` for flows whose layers have unit determinant."""
    layers = flow.layers
    if not all(l.unit_det for l in layers):
        raise ValueError("incompressible CoV needs unit-determinant layers")
    x = _batched(x, flow.dim_out)
    z = np.asarray(flow.inverse(x), dtype=float)
    ld = sum(np.asarray(l.log_abs_det_forward(h)) for l, h in _layer_inputs(layers, z))
    if np.any(np.abs(ld) > atol):
        raise ModelDegeneracyError(f"layer determinants deviate from one: max |logdet| {np.max(np.abs(ld)):.3g}")
    return CovReport({"log_prior": prior.log_prob(z)}, formula="incompressible")


def _layer_inputs(layers, z):
    for l in layers:
        yield l, z
        z = np.asarray(l.forward(z), dtype=float)


def cov_gmm_flow(flow: FlowMap, gmm, x) -> CovReport:
    """``log|det J_f(x)| + log Σ_k p(k) N(f(x) | μ_k, Σ_k)``."""
    x = _batched(x, flow.dim_out)
    ok = flow.in_domain(x)
    xs = np.where(ok[..., None], x, _safe_point(flow, x, ok))
    z = np.asarray(flow.inverse(xs), dtype=float)
    terms = {"log_det_encoder": flow.log_abs_det_inverse(xs), "log_mixture": gmm.log_prob(z)}
    return CovReport(masked_terms(ok, terms), formula="gmm_flow")


@dataclass
class VqFlowModel:
    """Nearest-representative cluster assignment plus one flow per cluster."""

    representatives: np.ndarray
    priors: np.ndarray
    flows: list
    embedding: Callable | None = None

    def __post_init__(self):
        self.representatives = np.atleast_2d(np.asarray(self.representatives, dtype=float))
        self.priors = np.asarray(self.priors, dtype=float)
        K = self.representatives.shape[0]
        if self.priors.size != K or len(self.flows) != K:
            raise ValueError("need one prior and one flow per representative")
        if np.any(self.priors <= 0) or abs(self.priors.sum() - 1) > 1e-12:
            raise ValueError("cluster priors must be positive and sum to 1")

    def assign(self, x):
        """``h(x)``: index of the nearest representative (lowest index on ties)."""
        x = np.asarray(x, dtype=float)
        e = x if self.embedding is None else np.asarray(self.embedding(x), dtype=float)
        d = np.sum((e[..., None, :] - self.representatives) ** 2, axis=-1)
        return np.argmin(d, axis=-1)


def cov_vq_flow(model: VqFlowModel, prior, x) -> CovReport:
    """``log p(h(x)) + log p(Z=f_h(x)) + log|det J_{f_h}(x)|``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = model.assign(x)
    n = x.shape[0]
    lp_k = np.log(model.priors[k])
    lz = np.full(n, -np.inf)
    ld = np.zeros(n)
    for c, flow in enumerate(model.flows):
        m = k == c
        if not np.any(m):
            continue
        rep = cov_bijective(flow, prior, x[m])
        lz[m] = rep.terms["log_prior"]
        ld[m] = rep.terms["log_det_encoder"]
    return CovReport({"log_cluster_prior": lp_k, "log_prior": lz, "log_det_encoder": ld}, formula="vq_flow")
