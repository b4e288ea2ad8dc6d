"""Monte-Carlo and adaptive-quadrature oracles."""

from __future__ import annotations

import warnings
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate as sint

MAX_NONFINITE_FRACTION = 1e-3


class IntegrationError(RuntimeError):
    pass


class MCResult(NamedTuple):
    estimate: float
    std_error: float
    n_nonfinite: int = 0


def mc_integrate(
    fn: Callable[[np.ndarray], np.ndarray],
    lo,
    hi,
    n: int,
    rng: np.random.Generator,
    *,
    chunk: int = 250_000,
) -> MCResult:
    """Uniform-sampling estimate of ``∫_box fn``.

    ``fn`` is vectorized: it receives points of shape ``(m, d)`` and returns
    ``m`` values. Non-finite values are counted and dropped from the sum (they
    contribute zero); more than 0.1% of them aborts the estimate.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape:
        raise ValueError("box bounds differ in dimension")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("integration box must be finite")
    if np.any(hi <= lo):
        raise ValueError("box must have positive extent in every dimension")
    if n < 2:
        raise ValueError("need at least two samples")
    volume = float(np.prod(hi - lo))
    total = 0.0
    total_sq = 0.0
    bad = 0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        pts = lo + (hi - lo) * rng.random((m, lo.size))
        vals = np.asarray(fn(pts), dtype=float).reshape(m)
        ok = np.isfinite(vals)
        bad += int(m - ok.sum())
        vals = np.where(ok, vals, 0.0)
        total += float(vals.sum())
        total_sq += float(np.dot(vals, vals))
        done += m
    if bad > MAX_NONFINITE_FRACTION * n:
        raise IntegrationError(f"{bad} of {n} integrand values were non-finite")
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
    return MCResult(volume * mean, volume * np.sqrt(var / n), bad)


def quad_integrate_1d(
    fn: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-10,
    *,
    points=None,
    limit: int = 200,
) -> float:
    """Adaptive quadrature of a scalar function on ``[a, b]`` (infinite ends allowed)."""
    if not a < b:
        raise ValueError("need a < b")
    with warnings.catch_warnings():
        warnings.simplefilter("error", sint.IntegrationWarning)
        try:
            kw = {} if points is None or not (np.isfinite(a) and np.isfinite(b)) else {"points": points}
            val, err = sint.quad(fn, a, b, epsabs=tol, epsrel=tol, limit=limit, **kw)
        except sint.IntegrationWarning as exc:
            raise IntegrationError(f"quadrature did not converge: {exc}") from None
    return float(val)
