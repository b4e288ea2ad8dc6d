"""Vectorized forward-mode dual numbers.

A :class:`Dual` carries a value array of shape ``S`` and a tangent array of
shape ``S + (k,)`` holding ``k`` directional derivatives at once. Seeding the
tangent with the identity along the last data axis yields full Jacobians in a
single pass, for a whole batch of points.

Maps are written against the functions in this module (``sin``, ``exp``,
``stack``, ``linear`` ...). These accept plain arrays as well, so one
implementation serves both evaluation and differentiation.
"""

from __future__ import annotations

import numpy as np
from scipy import special


class Dual:
    """Array-valued dual number ``val + eps·ε`` with ``k`` tangent directions."""

    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, val, eps):
        self.val = np.asarray(val, dtype=float)
        self.eps = np.asarray(eps, dtype=float)
        if self.eps.shape[:-1] != self.val.shape:
            raise ValueError(
                f"tangent shape {self.eps.shape} does not extend value shape {self.val.shape}"
            )

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    @property
    def n_tangents(self) -> int:
        return self.eps.shape[-1]

    def __len__(self):
        return len(self.val)

    def __repr__(self):
        return f"Dual(val={self.val!r}, eps={self.eps!r})"

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        if Ellipsis not in idx:
            idx = idx + (Ellipsis,)
        return Dual(self.val[idx], self.eps[idx + (slice(None),)])

    def __neg__(self):
        return Dual(-self.val, -self.eps)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Dual):
            v = self.val + other.val
            return Dual(v, _bcast(self.eps, v) + _bcast(other.eps, v))
        v = self.val + np.asarray(other, dtype=float)
        return Dual(v, _bcast(self.eps, v))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            v = self.val * other.val
            return Dual(
                v,
                _bcast(self.eps * other.val[..., None], v)
                + _bcast(other.eps * self.val[..., None], v),
            )
        o = np.asarray(other, dtype=float)
        v = self.val * o
        return Dual(v, _bcast(self.eps * o[..., None], v))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return self * other._reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self._reciprocal() * other

    def _reciprocal(self):
        inv = 1.0 / self.val
        return Dual(inv, -self.eps * (inv * inv)[..., None])

    def __pow__(self, p):
        if isinstance(p, Dual):
            return exp(p * log(self))
        p = float(p)
        if p == 2.0:
            return self * self
        return Dual(self.val**p, self.eps * (p * self.val ** (p - 1.0))[..., None])

    def __rpow__(self, base):
        return exp(self * np.log(base))


def _bcast(eps, v):
    target = np.shape(v) + (eps.shape[-1],)
    if eps.shape == target:
        return eps
    return np.broadcast_to(eps, target)


def value(x):
    """Real part of ``x`` (identity for plain arrays)."""
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def is_dual(x) -> bool:
    return isinstance(x, Dual)


def _unary(f, df):
    def op(x):
        if isinstance(x, Dual):
            return Dual(f(x.val), x.eps * df(x.val)[..., None])
        return f(np.asarray(x, dtype=float))

    return op


sin = _unary(np.sin, np.cos)
cos = _unary(np.cos, lambda v: -np.sin(v))
exp = _unary(np.exp, np.exp)
log = _unary(np.log, lambda v: 1.0 / v)
sqrt = _unary(np.sqrt, lambda v: 0.5 / np.sqrt(v))
tanh = _unary(np.tanh, lambda v: 1.0 - np.tanh(v) ** 2)
log1p = _unary(np.log1p, lambda v: 1.0 / (1.0 + v))
expm1 = _unary(np.expm1, np.exp)
sigmoid = _unary(special.expit, lambda v: special.expit(v) * (1.0 - special.expit(v)))
norm_cdf = _unary(special.ndtr, lambda v: np.exp(-0.5 * v * v) / np.sqrt(2.0 * np.pi))
norm_ppf = _unary(
    special.ndtri, lambda p: np.sqrt(2.0 * np.pi) * np.exp(0.5 * special.ndtri(p) ** 2)
)


def square(x):
    return x * x


def arctan2(y, x):
    """Two-argument arctangent with derivative ``(x dy − y dx)/(x² + y²)``."""
    if not isinstance(x, Dual) and not isinstance(y, Dual):
        return np.arctan2(y, x)
    yv, xv = value(y), value(x)
    v = np.arctan2(yv, xv)
    r2 = xv * xv + yv * yv
    out = Dual(v, np.zeros(v.shape + (_k(x, y),)))
    if isinstance(y, Dual):
        out.eps = out.eps + _bcast(y.eps * (xv / r2)[..., None], v)
    if isinstance(x, Dual):
        out.eps = out.eps - _bcast(x.eps * (yv / r2)[..., None], v)
    return out


def _k(*xs):
    for x in xs:
        if isinstance(x, Dual):
            return x.n_tangents
    return 0


def _promote(xs):
    k = _k(*xs)
    if k == 0:
        return None
    shape = np.broadcast_shapes(*(np.shape(value(x)) for x in xs))
    vals, epss = [], []
    for x in xs:
        v = np.broadcast_to(value(x), shape)
        vals.append(v)
        if isinstance(x, Dual):
            epss.append(np.broadcast_to(x.eps, shape + (k,)))
        else:
            epss.append(np.zeros(shape + (k,)))
    return vals, epss


def _eps_axis(axis, ndim):
    # axis in value coordinates -> axis in tangent coordinates
    return axis if axis >= 0 else axis - 1


def stack(xs, axis=-1):
    """``np.stack`` over a mix of duals and arrays."""
    xs = list(xs)
    p = _promote(xs)
    if p is None:
        return np.stack([np.asarray(x, dtype=float) for x in xs], axis=axis)
    vals, epss = p
    return Dual(np.stack(vals, axis=axis), np.stack(epss, axis=_eps_axis(axis, 0)))


def concatenate(xs, axis=-1):
    xs = list(xs)
    k = _k(*xs)
    if k == 0:
        return np.concatenate([np.asarray(x, dtype=float) for x in xs], axis=axis)
    lead = np.broadcast_shapes(*(np.shape(value(x))[:-1] for x in xs))
    vals, epss = [], []
    for x in xs:
        v = value(x)
        v = np.broadcast_to(v, lead + v.shape[-1:])
        vals.append(v)
        if isinstance(x, Dual):
            epss.append(np.broadcast_to(x.eps, v.shape + (k,)))
        else:
            epss.append(np.zeros(v.shape + (k,)))
    return Dual(np.concatenate(vals, axis=axis), np.concatenate(epss, axis=_eps_axis(axis, 0)))


def sum(x, axis=-1):  # noqa: A001 - mirrors numpy naming
    if isinstance(x, Dual):
        return Dual(x.val.sum(axis=axis), x.eps.sum(axis=_eps_axis(axis, x.ndim)))
    return np.sum(x, axis=axis)


def mean(x, axis=-1):
    n = value(x).shape[axis]
    return sum(x, axis=axis) / n


def linear(x, A, b=None):
    """Apply ``x ↦ A x + b`` along the last axis (``x`` has shape ``(..., n)``)."""
    A = np.asarray(A, dtype=float)
    if isinstance(x, Dual):
        v = x.val @ A.T
        eps = np.einsum("mn,...nk->...mk", A, x.eps)
        out = Dual(v, eps)
    else:
        out = np.asarray(x, dtype=float) @ A.T
    if b is not None:
        out = out + np.asarray(b, dtype=float)
    return out


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    p = _promote([a, b, cond.astype(float)])
    if p is None:
        return np.where(cond, a, b)
    (va, vb, _), (ea, eb, _) = p
    return Dual(np.where(cond, va, vb), np.where(cond[..., None], ea, eb))


def norm(x, axis=-1):
    return sqrt(sum(x * x, axis=axis))


def seed(x, directions=None) -> Dual:
    """Lift ``x`` of shape ``(..., n)`` to a dual seeded with the identity."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if directions is None:
        directions = np.eye(n)
    eps = np.broadcast_to(np.asarray(directions, dtype=float), x.shape + (directions.shape[-1],))
    return Dual(x, eps.copy())
