"""JSON model files and point files.

A model file is one JSON object whose ``"type"`` names the density family.
:func:`load_model` turns it into a :class:`LoadedModel` that can evaluate
log-densities (with per-term breakdown), draw samples where the family
supports it, and run the family's invariant checks. The README lists every
type with its fields.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import zoo
from .analytic import DONUT, DonutTarget, arg
from .bijective import (
    ActNorm,
    Affine,
    AffineCoupling,
    Composite,
    Identity,
    IncompressibleFlow,
    Mlp,
    Orthogonal,
    Permutation,
    cov_bijective,
    cov_gmm_flow,
    cov_incompressible,
    cov_vq_flow,
)
from .continuous import cov_continuous, decode_continuous, linear_field
from .core.jacobian import DUAL, FD, jacobian, relative_frobenius
from .core.linalg import logdet_lu
from .core.report import CovReport, masked_terms
from .diagnostics import check_normalization, check_stochastic_consistency
from .distributions import DiagonalGaussian, GaussianMixture, StandardNormal, UniformBox
from .kernels import AffineGaussianKernel, IndependentKernel
from .injective import FiniteCodebook, LinearBottleneck, cov_autoencoder, cov_kmeans, cov_linear_autoencoder
from .split import PiecewiseConstantModel, cov_disentangled, cov_linear_split, cov_piecewise_constant, cov_split, cov_split_nf
from .stochastic import (
    VaeModel,
    cov_bayes,
    cov_gmm,
    cov_markov_chain,
    cov_vae,
    linear_gaussian_chain,
    markov_path_spread,
)


class ModelFileError(ValueError):
    """Unreadable or invalid input file; carries a location when known."""

    def __init__(self, message: str, *, source: str = "<input>", line: int | None = None, column: int | None = None, where: str | None = None):
        self.message, self.source, self.line, self.column, self.where = message, source, line, column, where
        loc = source
        if line is not None:
            loc += f":{line}:{column}"
        if where:
            loc += f" at {where}"
        super().__init__(f"{loc}: {message}")


@dataclass
class Check:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), **self.detail}


@dataclass
class LoadedModel:
    kind: str
    dim: int
    evaluate: Callable[[np.ndarray], CovReport]
    sample: Callable | None = None  # (n, rng) -> (n, dim)
    box: tuple | None = None  # bounding box for normalization checks
    extra_checks: Callable | None = None  # (n, rng) -> list[Check]
    spec: dict = field(default_factory=dict)

    def checks(self, n: int, rng) -> list[Check]:
        out = []
        if self.dim == 2 and self.box is not None:
            out.append(normalization_check(self.evaluate, self.box, n, rng))
        if self.extra_checks is not None:
            out.extend(self.extra_checks(n, rng))
        return out


def normalization_check(evaluate, box, n, rng, n_sigma: float = 3.0) -> Check:
    lo, hi = box
    with np.errstate(over="ignore"):
        res = check_normalization(lambda x: evaluate(x).value, lo, hi, n, rng)
    dev = abs(res.estimate - 1.0)
    return Check(
        "normalization",
        bool(dev <= n_sigma * res.std_error),
        {"mass": res.estimate, "std_error": res.std_error, "n": n, "box": [list(map(float, lo)), list(map(float, hi))]},
    )


# --------------------------------------------------------------------------
# field access


class _Fields:
    def __init__(self, obj, where: str, source: str):
        if not isinstance(obj, dict):
            raise ModelFileError("expected a JSON object", source=source, where=where or "top level")
        self.obj, self.where, self.source = obj, where, source

    def _path(self, key):
        return f"{self.where}.{key}" if self.where else key

    def err(self, msg, key=None):
        return ModelFileError(msg, source=self.source, where=self._path(key) if key is not None else (self.where or None))

    def has(self, key):
        return key in self.obj

    def raw(self, key, default=...):
        if key not in self.obj:
            if default is ...:
                raise self.err("missing required field", key)
            return default
        return self.obj[key]

    def array(self, key, default=..., ndim: int | None = None):
        v = self.raw(key, default)
        if v is default and default is not ...:
            return default
        try:
            a = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise self.err("expected a numeric array", key) from None
        if ndim is not None and a.ndim != ndim:
            raise self.err(f"expected a {ndim}-d array, got shape {a.shape}", key)
        return a

    def number(self, key, default=...):
        v = self.raw(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.err("expected a number", key)
        return float(v)

    def integer(self, key, default=...):
        v = self.raw(key, default)
        if isinstance(v, bool) or not isinstance(v, int):
            raise self.err("expected an integer", key)
        return int(v)

    def sub(self, key, default=...):
        v = self.raw(key, default)
        return _Fields(v, self._path(key), self.source)

    def items(self, key):
        v = self.raw(key)
        if not isinstance(v, list):
            raise self.err("expected a list", key)
        return [_Fields(o, f"{self._path(key)}[{i}]", self.source) for i, o in enumerate(v)]


def _guard(fn, f: _Fields, key=None):
    """Turn constructor ``ValueError``s into located file errors."""
    try:
        return fn()
    except ModelFileError:
        raise
    except (ValueError, TypeError, IndexError) as e:
        raise f.err(str(e), key) from None


# --------------------------------------------------------------------------
# priors and layers


def build_prior(f: _Fields):
    kind = f.raw("type")
    if kind == "standard_normal":
        return StandardNormal(f.integer("dim"))
    if kind == "diagonal_gaussian":
        return _guard(lambda: DiagonalGaussian(f.array("mean", ndim=1), f.array("std", ndim=1)), f)
    if kind == "uniform":
        return _guard(lambda: UniformBox(f.array("lo", ndim=1), f.array("hi", ndim=1)), f)
    if kind == "gmm":
        return build_gmm(f)
    raise f.err(f"unknown prior type {kind!r}", "type")


def build_gmm(f: _Fields) -> GaussianMixture:
    return _guard(lambda: GaussianMixture(f.array("weights", ndim=1), f.array("means", ndim=2), f.array("stds", ndim=2)), f)


def _mlp(f: _Fields) -> Mlp:
    return _guard(lambda: Mlp(f.array("W1", ndim=2), f.array("b1", ndim=1), f.array("W2", ndim=2), f.array("b2", ndim=1)), f)


def build_layer(f: _Fields, dim: int):
    kind = f.raw("type")
    if kind == "identity":
        return Identity(dim)
    if kind == "affine":
        return _guard(lambda: Affine(f.array("W", ndim=2), f.array("b", None)), f)
    if kind == "orthogonal":
        return _guard(lambda: Orthogonal(f.array("Q", ndim=2), f.array("b", None)), f)
    if kind == "rotation":
        return Orthogonal.rotation_2d(f.number("angle"))
    if kind == "actnorm":
        return _guard(lambda: ActNorm(f.array("log_scale", ndim=1), f.array("shift", None)), f)
    if kind == "permutation":
        return _guard(lambda: Permutation([int(i) for i in f.raw("perm")]), f)
    if kind == "coupling":
        vp = bool(f.raw("volume_preserving", False))
        return _guard(lambda: AffineCoupling(dim, f.integer("split"), _mlp(f.sub("scale_net")), _mlp(f.sub("shift_net")), vp), f)
    raise f.err(f"unknown layer type {kind!r}", "type")


def build_flow(f: _Fields, dim: int) -> Composite:
    layers = [build_layer(lf, dim) for lf in f.items("layers")]
    if not layers:
        raise f.err("need at least one layer", "layers")
    for i, L in enumerate(layers):
        if L.dim_in != dim or L.dim_out != dim:
            raise f.err(f"layer {i} has dimension {L.dim_in}, expected {dim}", "layers")
    return Composite(layers)


def _donut_target(f: _Fields) -> DonutTarget:
    return _guard(lambda: DonutTarget(f.number("r0", DONUT.r0), f.number("r1", DONUT.r1)), f)


def _box(f: _Fields):
    if not f.has("box"):
        return None
    b = f.array("box", ndim=2)
    if b.shape[0] != 2:
        raise f.err("box must be [lo, hi]", "box")
    return b[0], b[1]


def _sample_box(sample, n=20000, seed=12345, pad=0.25):
    from .core.rng import make_rng

    s = sample(n, make_rng(seed))
    lo, hi = s.min(0), s.max(0)
    w = hi - lo
    return lo - pad * w, hi + pad * w


# --------------------------------------------------------------------------
# family builders; each returns a LoadedModel


def _flow_checks(flow, prior, dim):
    def run(n, rng):
        z = prior.sample(min(n, 2000), rng)
        zr = np.asarray(flow.inverse(np.asarray(flow.forward(z))))
        rt = float(np.max(np.linalg.norm(zr - z, axis=-1) / (1.0 + np.linalg.norm(z, axis=-1))))
        zs = z[:50]
        lay = np.asarray(flow.log_abs_det_forward(zs), dtype=float)
        lu = logdet_lu(jacobian(flow, zs))
        ld = float(np.max(np.abs(lay - lu)))
        jd = float(np.max(relative_frobenius(jacobian(flow, zs, DUAL), jacobian(flow, zs, FD))))
        return [
            Check("roundtrip", rt <= 1e-8, {"max_relative_error": rt}),
            Check("layer_logdet_vs_lu", ld <= 1e-8, {"max_abs_difference": ld}),
            Check("dual_vs_finite_difference", jd <= 1e-6, {"max_relative_error": jd}),
        ]

    return run


def _flow_sampler(flow, prior):
    return lambda n, rng: np.asarray(flow.forward(prior.sample(n, rng)), dtype=float)


def _bijective(f: _Fields, incompressible=False) -> LoadedModel:
    prior = build_prior(f.sub("prior"))
    dim = prior.dim
    flow = build_flow(f, dim)
    if incompressible:
        flow = _guard(lambda: IncompressibleFlow(flow.layers), f, "layers")
        ev = lambda x: cov_incompressible(flow, prior, x)  # noqa: E731
    else:
        form = f.raw("form", "encoder")
        if form not in ("encoder", "decoder", "jacobian"):
            raise f.err("form must be encoder, decoder or jacobian", "form")
        ev = lambda x: cov_bijective(flow, prior, x, form=form)  # noqa: E731
    samp = _flow_sampler(flow, prior)
    return LoadedModel("incompressible" if incompressible else "bijective", dim, ev, samp, _box(f) or _sample_box(samp), _flow_checks(flow, prior, dim))


def _gmm_flow(f: _Fields) -> LoadedModel:
    gmm = build_gmm(f.sub("mixture"))
    flow = build_flow(f, gmm.dim)
    return LoadedModel("gmm_flow", gmm.dim, lambda x: cov_gmm_flow(flow, gmm, x), _gmm_sampler(gmm, flow), _box(f) or _sample_box(_gmm_sampler(gmm, flow)))


def _gmm_sampler(gmm, flow=None):
    def samp(n, rng):
        s = gmm.sample(n, rng)
        s = s[0] if isinstance(s, tuple) else s
        return s if flow is None else np.asarray(flow.forward(s), dtype=float)

    return samp


def _gmm(f: _Fields) -> LoadedModel:
    gmm = build_gmm(f)
    samp = _gmm_sampler(gmm)
    return LoadedModel("gmm", gmm.dim, lambda x: cov_gmm(gmm, x), samp, _box(f) or _sample_box(samp))


def _donut_closed_form_check(ev, target):
    def run(n, rng):
        x = target.sample(min(n, 10000), rng)
        d = float(np.max(np.abs(ev(x).value - target.log_prob(x))))
        return [Check("matches_target_density", d <= 1e-9, {"max_abs_difference": d})]

    return run


def _donut_box(t):
    return np.array([-t.r1 - 1, -t.r1 - 1.0]), np.array([t.r1 + 1, t.r1 + 1.0])


def _donut_nf(f: _Fields) -> LoadedModel:
    t = _donut_target(f)
    fw = zoo.donut4(target=t)
    flow, prior = fw.bijective, fw.bijective_prior
    ev = lambda x: cov_bijective(flow, prior, x)  # noqa: E731
    closed = _donut_closed_form_check(ev, t)

    def checks(n, rng):
        z = prior.sample(min(n, 2000), rng)
        rt = float(np.max(np.abs(np.asarray(flow.inverse(flow.forward(z))) - z)))
        return [Check("roundtrip", rt <= 1e-8, {"max_abs_error": rt})] + closed(n, rng)

    return LoadedModel("donut_nf", 2, ev, _flow_sampler(flow, prior), _donut_box(t), checks)


def _donut_split(f: _Fields) -> LoadedModel:
    t = _donut_target(f)
    model = zoo.donut_split(t)
    ev = lambda x: cov_split(model, x)  # noqa: E731
    samp = lambda n, rng: model.sample(n, lambda m, r: 2 * np.pi * r.random((m, 1)), rng)[0]  # noqa: E731
    return LoadedModel("donut_split", 2, ev, samp, _donut_box(t), _donut_closed_form_check(ev, t))


def _donut_vae(f: _Fields) -> LoadedModel:
    t = _donut_target(f)
    a0 = f.number("alpha0_deg", 5.0)
    if not 0 < a0 < 180:
        raise f.err("alpha0_deg must lie in (0, 180)", "alpha0_deg")
    pair = zoo.donut_stochastic(a0, t)

    def ev(x):
        x = np.asarray(x, dtype=float)
        return cov_bayes(pair.prior, pair.decoder, pair.encoder, x, arg(x)[..., None])

    def samp(n, rng):
        return pair.decoder.sample(pair.prior.sample(n, rng), rng)

    def checks(n, rng):
        rep = check_stochastic_consistency(pair.prior, pair.encoder, pair.decoder, t, min(n, 10000), rng)
        return [Check("stochastic_consistency", rep.max_log_discrepancy <= 1e-10, rep.as_dict())] + _donut_closed_form_check(ev, t)(n, rng)

    return LoadedModel("donut_vae", 2, ev, samp, _donut_box(t), checks)


def _donut_autoencoder(f: _Fields) -> LoadedModel:
    t = _donut_target(f)
    fw = zoo.donut4(target=t)
    dec, prior = fw.injective, fw.injective_prior

    def ev(x):
        x = np.asarray(x, dtype=float)
        on = np.abs(np.linalg.norm(x, axis=-1) - t.manifold_radius) <= 1e-8 * t.manifold_radius
        z = arg(x)[..., None]
        rep = cov_autoencoder(dec, prior, z)
        return CovReport(masked_terms(on, dict(rep.terms)), formula=rep.formula)

    def samp(n, rng):
        return np.asarray(dec.forward(prior.sample(n, rng)), dtype=float)

    def checks(n, rng):
        z = prior.sample(min(n, 2000), rng)
        rt = float(np.max(np.abs(np.asarray(dec.inverse(dec.forward(z))) - z)))
        v = ev(samp(100, rng)).value
        d = float(np.max(np.abs(v + np.log(2 * np.pi * t.manifold_radius))))
        return [
            Check("roundtrip_codes", rt <= 1e-9, {"max_abs_error": rt}),
            Check("manifold_density", d <= 1e-12, {"max_abs_difference": d}),
        ]

    return LoadedModel("donut_autoencoder", 2, ev, samp, None, checks)


def _donut_split_nf(f: _Fields) -> LoadedModel:
    t = _donut_target(f)
    model = zoo.donut_split_nf(t)
    ev = lambda x: cov_split_nf(model, x)  # noqa: E731
    return LoadedModel("donut_split_nf", 2, ev, t.sample, _donut_box(t), _donut_closed_form_check(ev, t))


def _donut_disentangled(f: _Fields) -> LoadedModel:
    t = _donut_target(f)
    flow, prior = zoo.donut_polar_flow(t), zoo.donut_polar_prior()
    ev = lambda x: cov_disentangled(flow, prior, x, core_dim=1)  # noqa: E731
    return LoadedModel("donut_disentangled", 2, ev, _flow_sampler(flow, prior), _donut_box(t), _donut_closed_form_check(ev, t))


def _donut_vq_flow(f: _Fields) -> LoadedModel:
    t = _donut_target(f)
    model, prior = zoo.donut_vq_flow(t), StandardNormal(2)
    ev = lambda x: cov_vq_flow(model, prior, x)  # noqa: E731
    return LoadedModel("donut_vq_flow", 2, ev, t.sample, _donut_box(t), _donut_closed_form_check(ev, t))


def _linear_autoencoder(f: _Fields) -> LoadedModel:
    lb = _guard(lambda: LinearBottleneck(f.array("W", ndim=2)), f, "W")
    prior = build_prior(f.sub("prior"))
    if prior.dim != lb.dim_in:
        raise f.err(f"prior dimension {prior.dim} does not match code dimension {lb.dim_in}", "prior")
    return LoadedModel("linear_autoencoder", lb.dim_out, lambda x: cov_linear_autoencoder(lb, prior, x), _flow_sampler(lb, prior))


def _linear_split(f: _Fields) -> LoadedModel:
    lb = _guard(lambda: LinearBottleneck(f.array("W", ndim=2)), f, "W")
    prior = build_prior(f.sub("prior"))
    null_dist = build_prior(f.sub("nullspace"))
    null = IndependentKernel(null_dist, lb.dim_in)
    if prior.dim != lb.dim_in or null_dist.dim != lb.dim_out - lb.dim_in:
        raise f.err("prior and nullspace dimensions must add up to the data dimension")
    ev = lambda x: cov_linear_split(lb, prior, null, x)  # noqa: E731

    def samp(n, rng):
        z = prior.sample(n, rng)
        u = null_dist.sample(n, rng)
        return np.asarray(lb.forward(z), dtype=float) + u @ lb.U_perp.T

    return LoadedModel("linear_split", lb.dim_out, ev, samp, _box(f) or _sample_box(samp))


def _kernel_params(f: _Fields):
    return f.array("A", ndim=2), f.array("b", ndim=1), f.array("std", ndim=1)


def _affine_vae(f: _Fields) -> LoadedModel:
    e, d = f.sub("encoder"), f.sub("decoder")
    pe, pd = _kernel_params(e), _kernel_params(d)
    for params, sub in ((pe, e), (pd, d)):
        _guard(lambda: AffineGaussianKernel(*params), sub)
    model = _guard(lambda: VaeModel.affine(*pe, *pd), f)
    enc, dec = model.affine_params
    if dec.condition_dim != enc.target_dim or enc.condition_dim != dec.target_dim:
        raise f.err("encoder and decoder shapes do not match")
    D = model.data_dim
    # the decoder-induced marginal is Gaussian: N(b_D, A_D A_Dᵀ + diag s_D²)
    cov = dec.A @ dec.A.T + np.diag(dec.std**2)
    target = _GaussianTarget(dec.b, cov)

    def ev(x):
        x = np.asarray(x, dtype=float)
        return cov_vae(model, x, np.asarray(enc.mean(x)))

    def samp(n, rng):
        return dec.sample(model.prior.sample(n, rng), rng)

    def checks(n, rng):
        m = min(n, 10000)
        rep = check_stochastic_consistency(model.prior, model.encoder, model.decoder, target, m, rng)
        tol = 1e-8
        return [Check("stochastic_consistency", rep.max_log_discrepancy <= tol, {**rep.as_dict(), "tolerance": tol})]

    box = _box(f) or (dec.b - 8 * np.sqrt(np.diag(cov)), dec.b + 8 * np.sqrt(np.diag(cov)))
    return LoadedModel("affine_vae", D, ev, samp, box, checks)


class _GaussianTarget:
    def __init__(self, mean, cov):
        self.mean, self.cov = np.asarray(mean, float), np.asarray(cov, float)
        self.L = np.linalg.cholesky(self.cov)
        self.logdet = 2 * np.sum(np.log(np.diag(self.L)))

    def log_prob(self, x):
        r = np.asarray(x, float) - self.mean
        y = np.linalg.solve(self.L, r.reshape(-1, r.shape[-1]).T).T.reshape(r.shape)
        return -0.5 * (np.sum(y * y, -1) + self.logdet + r.shape[-1] * np.log(2 * np.pi))

    def sample(self, n, rng):
        return self.mean + rng.standard_normal((n, self.mean.size)) @ self.L.T


def _gaussian_chain(f: _Fields) -> LoadedModel:
    mean, var = f.number("mean", 0.0), f.number("var", 1.0)
    coefs, nv = f.array("coefs", ndim=1), f.array("noise_vars", ndim=1)
    model = _guard(lambda: linear_gaussian_chain(mean, var, coefs, nv), f)
    seed = f.integer("path_seed", 0)

    def ev(x):
        from .core.rng import make_rng

        return cov_markov_chain(model, x, make_rng(seed))

    def checks(n, rng):
        x = np.array([0.3])
        spread = markov_path_spread(model, x, 100, rng)
        out = [Check("path_spread", spread <= 1e-8, {"spread": spread})]
        exact = -0.5 * ((x[0] - mean) ** 2 / var + np.log(2 * np.pi * var))
        d = float(abs(ev(x[None]).value[0] - exact))
        out.append(Check("matches_marginal", d <= 1e-8, {"abs_difference": d}))
        return out

    samp = lambda n, rng: mean + np.sqrt(var) * rng.standard_normal((n, 1))  # noqa: E731
    return LoadedModel("gaussian_chain", 1, ev, samp, None, checks)


def _kmeans(f: _Fields) -> LoadedModel:
    cb = _guard(lambda: FiniteCodebook(f.array("representatives", ndim=2), f.array("priors", ndim=1)), f)

    def ev(x):
        r = cov_kmeans(cb, x)
        return CovReport({"log_mass": r.log_density}, formula="kmeans")

    def samp(n, rng):
        return cb.decode(rng.choice(cb.K, size=n, p=cb.priors))

    def checks(n, rng):
        s = float(np.sum(np.exp(ev(cb.data_representatives()).value)))
        return [Check("masses_sum_to_one", abs(s - 1) <= 1e-12, {"total_mass": s})]

    return LoadedModel("kmeans", cb.representatives.shape[1], ev, samp, None, checks)


def _histogram(f: _Fields) -> LoadedModel:
    raw_edges = f.raw("edges")
    if not isinstance(raw_edges, list) or not raw_edges:
        raise f.err("expected a list of edge arrays", "edges")
    edges = [np.asarray(e, dtype=float) for e in raw_edges]
    masses = f.array("masses")
    model = _guard(lambda: PiecewiseConstantModel.from_histogram(edges, masses), f)
    lo = np.array([e[0] for e in edges])
    hi = np.array([e[-1] for e in edges])

    def samp(n, rng):
        m = np.exp(model.log_masses)
        k = rng.choice(m.size, size=n, p=m / m.sum())
        idx = np.unravel_index(k, tuple(len(e) - 1 for e in edges))
        u = rng.random((n, len(edges)))
        return np.stack([e[i] + u[:, d] * (e[i + 1] - e[i]) for d, (e, i) in enumerate(zip(edges, idx))], -1)

    return LoadedModel("histogram", len(edges), lambda x: cov_piecewise_constant(model, x), samp, (lo, hi))


def _continuous_linear(f: _Fields) -> LoadedModel:
    prior = build_prior(f.sub("prior"))
    a, T, steps = f.number("rate"), f.number("T", 1.0), f.integer("steps", 100)
    field_ = linear_field(a, prior.dim)
    ev = lambda x: cov_continuous(field_, prior, np.asarray(x, dtype=float), T, steps)  # noqa: E731
    samp = lambda n, rng: decode_continuous(field_, prior.sample(n, rng), T, steps)  # noqa: E731
    return LoadedModel("continuous_linear", prior.dim, ev, samp, _box(f) or _sample_box(samp))


FAMILIES: dict[str, Callable[[_Fields], LoadedModel]] = {
    "bijective": _bijective,
    "incompressible": lambda f: _bijective(f, incompressible=True),
    "gmm": _gmm,
    "gmm_flow": _gmm_flow,
    "donut_nf": _donut_nf,
    "donut_split": _donut_split,
    "donut_vae": _donut_vae,
    "donut_autoencoder": _donut_autoencoder,
    "donut_split_nf": _donut_split_nf,
    "donut_disentangled": _donut_disentangled,
    "donut_vq_flow": _donut_vq_flow,
    "linear_autoencoder": _linear_autoencoder,
    "linear_split": _linear_split,
    "affine_vae": _affine_vae,
    "gaussian_chain": _gaussian_chain,
    "kmeans": _kmeans,
    "histogram": _histogram,
    "continuous_linear": _continuous_linear,
}


def build_model(obj, source: str = "<input>") -> LoadedModel:
    f = _Fields(obj, "", source)
    kind = f.raw("type")
    if kind not in FAMILIES:
        raise f.err(f"unknown model type {kind!r}; known: {', '.join(sorted(FAMILIES))}", "type")
    m = FAMILIES[kind](f)
    m.spec = obj
    return m


def _parse_json(text: str, source: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFileError(e.msg, source=source, line=e.lineno, column=e.colno) from None


def parse_model(text: str, source: str = "<string>") -> LoadedModel:
    return build_model(_parse_json(text, source), source)


def load_model(path) -> LoadedModel:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ModelFileError(f"cannot read file ({e.strerror})", source=str(p)) from None
    return parse_model(text, str(p))


# --------------------------------------------------------------------------
# points


def parse_points(text: str, source: str = "<string>", fmt: str | None = None) -> np.ndarray:
    """Points as a JSON list of rows (or ``{"points": rows}``) or as CSV.

    CSV may start with a header line; every other line must hold the same
    number of numeric fields.
    """
    if fmt is None:
        fmt = "json" if text.lstrip()[:1] in ("[", "{") else "csv"
    if fmt == "json":
        obj = _parse_json(text, source)
        if isinstance(obj, dict):
            if "points" not in obj:
                raise ModelFileError("missing required field", source=source, where="points")
            obj = obj["points"]
        try:
            a = np.asarray(obj, dtype=float)
        except (TypeError, ValueError):
            raise ModelFileError("points must be a rectangular numeric array", source=source) from None
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2:
            raise ModelFileError(f"points must be 2-d, got shape {a.shape}", source=source)
        return a
    rows = []
    width = None
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        vals = []
        for col, cell in enumerate(row, start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                if not rows and lineno == 1:
                    vals = None  # header
                    break
                raise ModelFileError(f"not a number: {cell!r}", source=source, line=lineno, column=col) from None
        if vals is None:
            continue
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ModelFileError(f"expected {width} fields, got {len(vals)}", source=source, line=lineno, column=1)
        rows.append(vals)
    if not rows:
        raise ModelFileError("no points found", source=source)
    return np.asarray(rows, dtype=float)


def load_points(path, dim: int | None = None) -> np.ndarray:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ModelFileError(f"cannot read file ({e.strerror})", source=str(p)) from None
    fmt = "csv" if p.suffix.lower() == ".csv" else ("json" if p.suffix.lower() == ".json" else None)
    pts = parse_points(text, str(p), fmt)
    if dim is not None and pts.shape[1] != dim:
        raise ModelFileError(f"points have dimension {pts.shape[1]}, model expects {dim}", source=str(p))
    return pts
