"""Jacobians by forward-mode dual numbers or central finite differences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from . import dual as dm


class MapSingularityError(ArithmeticError):
    """A map produced non-finite output or derivatives at the requested point."""


@dataclass(frozen=True)
class DiffConfig:
    """How to differentiate.

    ``mode="dual"`` is exact up to rounding. ``mode="fd"`` uses central
    differences with step ``cbrt(eps) * max(1, |x_i|)`` per coordinate.
    """

    mode: Literal["dual", "fd"] = "dual"
    step_scale: float = float(np.cbrt(np.finfo(float).eps))


DUAL = DiffConfig("dual")
FD = DiffConfig("fd")


def _as_fn(fmap) -> Callable:
    fwd = getattr(fmap, "forward", None)
    return fwd if fwd is not None else fmap


def jacobian(fmap, at, cfg: DiffConfig = DUAL, *, check: bool = True) -> np.ndarray:
    """Jacobian of ``fmap`` at ``at``.

    ``fmap`` is a callable or any object with a ``forward`` method mapping
    arrays of shape ``(..., n)`` to ``(..., m)``. Batched input gives a batch
    of ``m × n`` matrices (rows = outputs, columns = inputs).
    """
    fn = _as_fn(fmap)
    x = np.asarray(at, dtype=float)
    if x.ndim == 0:
        raise ValueError("jacobian expects a vector point, got a scalar")
    dim_in = getattr(fmap, "dim_in", None)
    if dim_in is not None and x.shape[-1] != dim_in:
        raise ValueError(f"point has dim {x.shape[-1]}, map expects {dim_in}")
    if cfg.mode == "dual":
        out = fn(dm.seed(x))
        if isinstance(out, dm.Dual):
            J = np.array(out.eps)
        else:
            out = np.asarray(out, dtype=float)
            J = np.zeros(out.shape + (x.shape[-1],))
    elif cfg.mode == "fd":
        J = _fd_jacobian(fn, x, cfg.step_scale)
    else:
        raise ValueError(f"unknown differentiation mode {cfg.mode!r}")
    if check and not np.all(np.isfinite(J)):
        raise MapSingularityError("non-finite Jacobian entries; map is singular here")
    return J


def _fd_jacobian(fn, x, scale):
    n = x.shape[-1]
    cols = []
    for i in range(n):
        h = scale * np.maximum(1.0, np.abs(x[..., i]))
        xp = x.copy()
        xm = x.copy()
        xp[..., i] += h
        xm[..., i] -= h
        # use the actually representable step
        hh = (xp[..., i] - xm[..., i])[..., None]
        cols.append((np.asarray(fn(xp), dtype=float) - np.asarray(fn(xm), dtype=float)) / hh)
    return np.stack(cols, axis=-1)


def value_and_jacobian(fmap, at):
    """Forward value and dual Jacobian in one pass."""
    fn = _as_fn(fmap)
    x = np.asarray(at, dtype=float)
    out = fn(dm.seed(x))
    if isinstance(out, dm.Dual):
        return out.val, np.array(out.eps)
    out = np.asarray(out, dtype=float)
    return out, np.zeros(out.shape + (x.shape[-1],))


def relative_frobenius(a, b) -> np.ndarray:
    """``‖a − b‖_F / max(‖b‖_F, 1e-300)`` over the trailing two axes."""
    num = np.linalg.norm(np.asarray(a) - np.asarray(b), axis=(-2, -1))
    den = np.linalg.norm(np.asarray(b), axis=(-2, -1))
    return num / np.maximum(den, 1e-300)
