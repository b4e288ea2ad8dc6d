"""Four-way demos: build the bijective, injective, stochastic and split model
of a target, check them, measure their trade-off metrics and collect plot data.

Each model type gets its own child random stream, so results do not depend
on how many worker threads run the four jobs.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import zoo
from .analytic import arg
from .bijective import cov_bijective
from .core.rng import RngStream
from .diagnostics import (
    check_deterministic_consistency,
    check_normalization,
    check_stochastic_consistency,
    tradeoff_metrics,
)
from .injective import cov_autoencoder
from .split import cov_split
from .stochastic import cov_bayes

KINDS = ("bijective", "injective", "stochastic", "split")
DEMOS = ("gauss4", "donut4")


@dataclass
class DemoSetup:
    name: str
    fourway: zoo.FourWay
    reference_point: np.ndarray
    expected_log_density: float
    box: tuple
    grid_box: tuple
    bayes_code: object  # x -> code at which the stochastic CoV is evaluated


@dataclass
class KindResult:
    kind: str
    report: dict
    samples: np.ndarray
    heatmap: np.ndarray | None = None  # rows (x, y, log_density)
    manifold: np.ndarray | None = None  # rows (code, x, y, log_density)
    passed: bool = True
    failures: list = field(default_factory=list)


def setup(name: str, rho: float = 0.5, alpha0_deg: float = 5.0) -> DemoSetup:
    if name == "gauss4":
        fw = zoo.gauss4(rho)
        enc = fw.stochastic.encoder
        return DemoSetup(
            name, fw, np.zeros(2), float(-np.log(np.pi)),
            (np.array([-6.0, -3.0]), np.array([6.0, 3.0])),
            (np.array([-3.0, -1.5]), np.array([3.0, 1.5])),
            lambda x: enc.mean(x),
        )
    if name == "donut4":
        fw = zoo.donut4(alpha0_deg)
        t = fw.target
        return DemoSetup(
            name, fw, np.array([t.manifold_radius, 0.0]), float(t.log_density_value),
            (np.array([-9.0, -9.0]), np.array([9.0, 9.0])),
            (np.array([-9.0, -9.0]), np.array([9.0, 9.0])),
            lambda x: arg(x)[..., None],
        )
    raise ValueError(f"unknown demo {name!r}; choose from {', '.join(DEMOS)}")


def density_fn(s: DemoSetup, kind: str):
    fw = s.fourway
    if kind == "bijective":
        return lambda x: cov_bijective(fw.bijective, fw.bijective_prior, x)
    if kind == "split":
        return lambda x: cov_split(fw.split, x)
    if kind == "stochastic":
        p = fw.stochastic
        return lambda x: cov_bayes(p.prior, p.decoder, p.encoder, x, s.bayes_code(np.asarray(x, dtype=float)))
    raise ValueError(kind)


def sampler(s: DemoSetup, kind: str):
    fw = s.fourway
    if kind == "bijective":
        return lambda n, rng: np.asarray(fw.bijective.forward(fw.bijective_prior.sample(n, rng)), dtype=float)
    if kind == "injective":
        return lambda n, rng: np.asarray(fw.injective.forward(fw.injective_prior.sample(n, rng)), dtype=float)
    if kind == "split":
        return lambda n, rng: fw.split.sample(n, fw.split_core_sampler, rng)[0]
    p = fw.stochastic
    return lambda n, rng: p.decoder.sample(p.prior.sample(n, rng), rng)


def reconstructor(s: DemoSetup, kind: str):
    """``x ↦ x̂``: encode then decode (sampling where the model is stochastic)."""
    fw = s.fourway
    if kind == "bijective":
        g = fw.bijective
        return lambda x, rng: np.asarray(g.forward(g.inverse(x)), dtype=float)
    if kind == "injective":
        g = fw.injective
        return lambda x, rng: np.asarray(g.forward(g.inverse(x)), dtype=float)
    if kind == "split":
        m = fw.split
        return lambda x, rng: m.fiber.sample(np.asarray(m.encoder(x), dtype=float), rng)
    p = fw.stochastic
    return lambda x, rng: p.decoder.sample(p.encoder.sample(x, rng), rng)


def _grid(box, n):
    lo, hi = box
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    return np.stack([X.ravel(), Y.ravel()], -1)


def run_kind(s: DemoSetup, kind: str, rng, n_norm: int, n_metrics: int, n_plot: int, grid_n: int) -> KindResult:
    fw = s.fourway
    x0 = s.reference_point[None]
    rep: dict = {"kind": kind}
    failures = []

    if kind == "injective":
        g, prior = fw.injective, fw.injective_prior
        z0 = np.asarray(g.inverse(x0), dtype=float)
        xm = np.asarray(g.forward(z0), dtype=float)
        on = bool(np.linalg.norm(xm - x0) <= 1e-9 * (1 + np.linalg.norm(x0)))
        val = float(cov_autoencoder(g, prior, z0).value[0])
        rep["reference"] = {"point": x0[0].tolist(), "on_manifold": on, "log_density_on_manifold": val}
        codes = prior.sample(1000, rng)
        cons = check_deterministic_consistency(g.inverse, g.forward, codes=codes, points=fw.target.sample(1000, rng))
        rep["consistency"] = cons.as_dict()
        rep["consistency"]["note"] = "data round trip is the distance to the decoder manifold"
        if cons.max_roundtrip_code > 1e-9:
            failures.append("code_roundtrip")
        zs = np.linspace(*[float(v[0]) for v in _code_range(prior)], 401)[:, None]
        xs = np.asarray(g.forward(zs), dtype=float)
        man = np.column_stack([zs[:, 0], xs, cov_autoencoder(g, prior, zs).value])
        heat = None
    else:
        dens = density_fn(s, kind)
        r0 = dens(x0)
        val = float(np.asarray(r0.value).ravel()[0])
        rep["reference"] = {
            "point": x0[0].tolist(),
            "log_density": val,
            "expected": s.expected_log_density,
            "terms": {k: float(np.asarray(v).ravel()[0]) for k, v in r0.terms.items()},
        }
        if abs(val - s.expected_log_density) > 1e-9:
            failures.append("reference_density")
        lo, hi = s.box
        with np.errstate(over="ignore"):
            norm = check_normalization(lambda x: dens(x).value, lo, hi, n_norm, rng)
        rep["normalization"] = {"mass": norm.estimate, "std_error": norm.std_error, "n": n_norm}
        if abs(norm.estimate - 1.0) > 3 * norm.std_error:
            failures.append("normalization")
        xt = fw.target.sample(2000, rng)
        err = float(np.max(np.abs(dens(xt).value - fw.target.log_prob(xt))))
        rep["max_abs_error_vs_target"] = err
        if err > 1e-9:
            failures.append("target_density")
        if kind == "bijective":
            g = fw.bijective
            cons = check_deterministic_consistency(g.inverse, g.forward, codes=fw.bijective_prior.sample(1000, rng), points=xt)
            rep["consistency"] = cons.as_dict()
            if max(cons.max_roundtrip_code, cons.max_roundtrip_data) > 1e-8 * (1 + np.max(np.abs(xt))):
                failures.append("roundtrip")
        elif kind == "stochastic":
            p = fw.stochastic
            cons = check_stochastic_consistency(p.prior, p.encoder, p.decoder, fw.target, 2000, rng)
            rep["consistency"] = cons.as_dict()
            if cons.max_log_discrepancy > 1e-10:
                failures.append("stochastic_consistency")
        grid = _grid(s.grid_box, grid_n)
        heat = np.column_stack([grid, dens(grid).value])
        man = None

    tm = tradeoff_metrics(fw.target, reconstructor(s, kind), n_metrics, rng)
    rep["tradeoff"] = {
        "distortion": tm.distortion,
        "distortion_se": tm.distortion_se,
        "divergence": tm.divergence,
        "divergence_se": tm.divergence_se,
    }
    samples = sampler(s, kind)(n_plot, rng)
    rep["passed"] = not failures
    rep["failures"] = failures
    return KindResult(kind, rep, samples, heat, man, not failures, failures)


def _code_range(prior):
    lo, hi = prior.support()
    lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
    lo = np.where(np.isfinite(lo), lo, -4.0)
    hi = np.where(np.isfinite(hi), hi, 4.0)
    return lo, hi


def max_workers() -> int:
    v = os.environ.get("COVKIT_THREADS", "")
    try:
        n = int(v)
    except ValueError:
        n = 1
    return max(n, 1)


def run_demo(name: str, seed: int, *, n_norm: int = 200_000, n_metrics: int = 20_000, n_plot: int = 2000, grid_n: int = 81) -> tuple[dict, list[KindResult]]:
    s = setup(name)
    streams = RngStream(seed).spawn(len(KINDS))
    with ThreadPoolExecutor(max_workers=max_workers()) as ex:
        futs = [ex.submit(run_kind, s, k, rng, n_norm, n_metrics, n_plot, grid_n) for k, rng in zip(KINDS, streams)]
        results = [f.result() for f in futs]
    report = {
        "demo": name,
        "seed": seed,
        "samples": {"normalization": n_norm, "metrics": n_metrics, "plot": n_plot},
        "models": {r.kind: r.report for r in results},
        "passed": all(r.passed for r in results),
    }
    return report, results
