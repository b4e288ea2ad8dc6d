"""Self-consistency checks, normalization oracles and rate/distortion metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .core.integrate import MCResult, mc_integrate


@dataclass
class ConsistencyReport:
    """Non-negative discrepancy measures; ``None`` where a check was not run."""

    max_roundtrip_code: float | None = None  # max ‖f(g(z)) − z‖
    max_roundtrip_data: float | None = None  # max ‖g(f(x)) − x‖
    max_log_discrepancy: float | None = None
    mean_log_discrepancy: float | None = None
    std_error: float | None = None
    kl_variance: float | None = None
    n_codes: int = 0
    n_points: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def check_deterministic_consistency(f: Callable, g: Callable, codes=None, points=None) -> ConsistencyReport:
    """Round-trip errors ``f(g(z)) − z`` over codes and ``g(f(x)) − x`` over points.

    For bottleneck models the data round trip measures the distance to the
    decoder manifold rather than an inconsistency.
    """
    rep = ConsistencyReport()
    if codes is not None:
        z = np.asarray(codes, dtype=float)
        e = np.linalg.norm(np.asarray(f(g(z)), dtype=float) - z, axis=-1)
        rep.max_roundtrip_code = float(np.max(e))
        rep.n_codes = int(e.size)
    if points is not None:
        x = np.asarray(points, dtype=float)
        e = np.linalg.norm(np.asarray(g(f(x)), dtype=float) - x, axis=-1)
        rep.max_roundtrip_data = float(np.max(e))
        rep.n_points = int(e.size)
    return rep


def check_stochastic_consistency(prior, encoder, decoder, target, n: int, rng) -> ConsistencyReport:
    """``|log p*(x) + log p(z|x) − log p(z) − log p(x|z)|`` over ``x ~ p*``, ``z ~ p(z|x)``.

    Zero everywhere iff the encoder- and decoder-induced joints agree on the
    sampled pairs.
    """
    x = target.sample(n, rng)
    z = encoder.sample(x, rng)
    d = np.abs(target.log_prob(x) + encoder.log_prob(z, x) - prior.log_prob(z) - decoder.log_prob(x, z))
    return ConsistencyReport(
        max_log_discrepancy=float(np.max(d)),
        mean_log_discrepancy=float(np.mean(d)),
        std_error=float(np.std(d, ddof=1) / np.sqrt(n)),
        n_points=n,
    )


def check_normalization(log_density: Callable, lo, hi, n: int, rng) -> MCResult:
    """MC estimate of ``∫_box exp(log_density)``."""
    return mc_integrate(lambda x: np.exp(log_density(x)), lo, hi, n, rng)


# --------------------------------------------------------------------------
# distortion and divergence


def squared_distance(x, y):
    return np.sum((np.asarray(x) - np.asarray(y)) ** 2, axis=-1)


def _pairwise_mean_dist(a, b):
    d = np.sqrt(np.maximum(np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2 * a @ b.T, 0.0))
    return float(d.mean())


def energy_distance(x, y) -> float:
    """V-statistic ``2E‖X−Y‖ − E‖X−X'‖ − E‖Y−Y'‖``; non-negative, zero iff equal samples."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return max(2 * _pairwise_mean_dist(x, y) - _pairwise_mean_dist(x, x) - _pairwise_mean_dist(y, y), 0.0)


def histogram_kl(x, y, lo, hi, bins: int = 32, smoothing: float = 0.5) -> float:
    """``KL(hist_x ‖ hist_y)`` on a regular 2-D grid with additive smoothing."""
    rng_ = [[lo[0], hi[0]], [lo[1], hi[1]]]
    hx, _, _ = np.histogram2d(x[:, 0], x[:, 1], bins=bins, range=rng_)
    hy, _, _ = np.histogram2d(y[:, 0], y[:, 1], bins=bins, range=rng_)
    p = (hx + smoothing) / (hx + smoothing).sum()
    q = (hy + smoothing) / (hy + smoothing).sum()
    return float(np.sum(p * np.log(p / q)))


@dataclass
class TradeoffMetrics:
    distortion: float
    distortion_se: float
    divergence: float
    divergence_se: float
    rate: float | None = None  # entropy of a discrete code, when there is one


def tradeoff_metrics(
    target,
    reconstruct: Callable,
    n: int,
    rng,
    *,
    distance: Callable = squared_distance,
    n_batches: int = 20,
    rate: float | None = None,
) -> TradeoffMetrics:
    """Distortion ``E δ(x, x̂)`` and divergence between ``p*`` and ``p(X̂)``.

    ``reconstruct(x, rng)`` runs encoder then decoder. The divergence is the
    energy distance between reconstructions and an independent target sample,
    averaged over ``n_batches`` slices (which also gives its standard error).
    """
    x = target.sample(n, rng)
    xh = np.asarray(reconstruct(x, rng), dtype=float)
    ref = target.sample(n, rng)
    d = distance(x, xh)
    m = n // n_batches
    ed = [energy_distance(ref[i * m : (i + 1) * m], xh[i * m : (i + 1) * m]) for i in range(n_batches)]
    return TradeoffMetrics(
        float(np.mean(d)),
        float(np.std(d, ddof=1) / np.sqrt(n)),
        float(np.mean(ed)),
        float(np.std(ed, ddof=1) / np.sqrt(n_batches)),
        rate,
    )
