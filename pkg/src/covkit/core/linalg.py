"""Determinants by pivoted LU, plus small helpers for rectangular Jacobians."""

from __future__ import annotations

import numpy as np

PIVOT_RTOL = 1e-12


class RankDeficiencyError(np.linalg.LinAlgError):
    """A matrix was numerically singular (or a Gram matrix rank deficient)."""


def lu_factor(m):
    """Batched LU with partial pivoting.

    Returns ``(lu, perm_sign)`` where ``lu`` packs unit-lower ``L`` and upper
    ``U`` in the usual way and ``perm_sign`` is the permutation parity.
    """
    a = np.array(m, dtype=float, copy=True)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    n = a.shape[-1]
    batch = a.shape[:-2]
    a = a.reshape((-1, n, n))
    sign = np.ones(a.shape[0])
    rows = np.arange(a.shape[0])
    for k in range(n - 1):
        p = k + np.argmax(np.abs(a[:, k:, k]), axis=1)
        swap = p != k
        if np.any(swap):
            tmp = a[rows, k, :].copy()
            a[rows, k, :] = a[rows, p, :]
            a[rows, p, :] = tmp
            sign = np.where(swap, -sign, sign)
        piv = a[:, k, k]
        safe = np.where(piv == 0.0, 1.0, piv)
        factors = a[:, k + 1 :, k] / safe[:, None]
        factors = np.where((piv == 0.0)[:, None], 0.0, factors)
        a[:, k + 1 :, k] = factors
        a[:, k + 1 :, k + 1 :] -= factors[:, :, None] * a[:, k, None, k + 1 :]
    return a.reshape(batch + (n, n)), sign.reshape(batch)


def logdet_lu(m, *, rtol: float = PIVOT_RTOL, raise_singular: bool = True):
    """``log|det m|`` from the pivots of a partial-pivoting LU factorization.

    A pivot below ``rtol * max|m_ij|`` counts as rank deficiency: this raises
    :class:`RankDeficiencyError`, or yields ``-inf`` for that matrix when
    ``raise_singular`` is false.
    """
    m = np.asarray(m, dtype=float)
    lu, _ = lu_factor(m)
    piv = np.abs(np.diagonal(lu, axis1=-2, axis2=-1))
    scale = np.max(np.abs(m), axis=(-2, -1))
    singular = np.any(piv <= rtol * scale[..., None], axis=-1) | (scale == 0.0)
    if np.any(singular) and raise_singular:
        raise RankDeficiencyError(
            f"matrix is numerically singular (pivot below {rtol:g}·max|entry|)"
        )
    with np.errstate(divide="ignore"):
        out = np.sum(np.log(piv), axis=-1)
    out = np.where(singular, -np.inf, out)
    return out if out.ndim else float(out)


def signed_logdet_lu(m):
    """``(sign, log|det m|)`` from the same factorization."""
    m = np.asarray(m, dtype=float)
    lu, psign = lu_factor(m)
    d = np.diagonal(lu, axis1=-2, axis2=-1)
    sign = psign * np.prod(np.sign(d), axis=-1)
    return sign, logdet_lu(m)


def half_logdet_gram(J, **kw):
    """``½ log det(Jᵀ J)`` for a (batch of) tall Jacobian(s)."""
    J = np.asarray(J, dtype=float)
    G = np.swapaxes(J, -1, -2) @ J
    return 0.5 * logdet_lu(G, **kw)


def pinv_left(W):
    """Left inverse ``(WᵀW)⁻¹Wᵀ`` of a full-column-rank matrix."""
    W = np.asarray(W, dtype=float)
    G = W.T @ W
    logdet_lu(G)  # raises on rank deficiency
    return np.linalg.solve(G, W.T)
