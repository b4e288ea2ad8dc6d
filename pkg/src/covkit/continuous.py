"""ODE flows with the instantaneous change of variables, and DDPM discretizations.

Encoding integrates data forward in time, ``t: 0 → T``; decoding runs the same
ODE backwards. Along a trajectory the log-determinant of the flow map is the
time integral of ``tr ∂F/∂z``; we integrate it together with the state using
classic fourth-order Runge-Kutta on the augmented system.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core import dual as dm
from .core.jacobian import jacobian
from .core.report import CovReport
from .core.rng import rademacher
from .kernels import AffineGaussianKernel

BLOWUP_NORM = 1e8


class TrajectoryBlowUp(FloatingPointError):
    pass


@dataclass(frozen=True)
class VectorField:
    """Time-dependent field ``F(t, z)`` on ``R^dim``.

    ``fn`` must accept batched ``z`` of shape ``(..., dim)`` and be written
    with :mod:`covkit.core.dual` so its Jacobian is available; alternatively
    pass ``jac(t, z)`` explicitly.
    """

    fn: Callable
    dim: int
    jac: Callable | None = None

    def __call__(self, t, z):
        return self.fn(t, z)

    def jacobian(self, t, z):
        if self.jac is not None:
            return np.asarray(self.jac(t, z), dtype=float)
        return jacobian(lambda u: self.fn(t, u), z, check=False)

    def trace(self, t, z):
        return np.trace(self.jacobian(t, z), axis1=-2, axis2=-1)

    def trace_hutchinson(self, t, z, probes):
        """Unbiased ``εᵀ J ε`` for each probe (shape ``(M, ..., dim)``), averaged."""
        # a directional derivative per probe, in one dual pass
        zd = dm.Dual(np.broadcast_to(z, probes.shape), probes[..., None])
        out = self.fn(t, zd)
        jv = out.eps[..., 0] if isinstance(out, dm.Dual) else np.zeros(probes.shape)
        return np.mean(np.sum(probes * jv, axis=-1), axis=0)


def linear_field(a: float, dim: int) -> VectorField:
    """``F(t, z) = a z``."""
    return VectorField(lambda t, z: a * z, dim, jac=lambda t, z: a * np.broadcast_to(np.eye(dim), np.shape(z)[:-1] + (dim, dim)))


def zero_field(dim: int) -> VectorField:
    return VectorField(lambda t, z: 0.0 * z, dim)


class FlowResult(NamedTuple):
    endpoint: np.ndarray
    logdet: np.ndarray


def integrate_flow(
    field: VectorField,
    start,
    t0: float,
    t1: float,
    steps: int,
    *,
    trace: str = "exact",
    n_probes: int = 16,
    rng: np.random.Generator | None = None,
) -> FlowResult:
    """RK4 transport of ``start`` from ``t0`` to ``t1`` (either direction).

    Returns the endpoint and ``∫_{t0}^{t1} tr J_F dt`` along the trajectory,
    which is the log-determinant of the flow map from start to endpoint.
    With ``trace="hutchinson"`` the trace is estimated with ``n_probes``
    Rademacher probes held fixed along the trajectory.
    """
    if steps < 1:
        raise ValueError("need at least one step")
    z = np.array(start, dtype=float)
    if z.shape[-1] != field.dim:
        raise ValueError(f"start has dim {z.shape[-1]}, field expects {field.dim}")
    if trace == "exact":
        tr = field.trace
    elif trace == "hutchinson":
        if rng is None:
            raise ValueError("Hutchinson traces need an rng")
        probes = rademacher(rng, (n_probes,) + z.shape)
        tr = lambda t, u: field.trace_hutchinson(t, u, probes)  # noqa: E731
    else:
        raise ValueError(f"unknown trace mode {trace!r}")

    def rhs(t, u):
        return np.asarray(field(t, u), dtype=float), np.asarray(tr(t, u), dtype=float)

    h = (t1 - t0) / steps
    ld = np.zeros(z.shape[:-1])
    t = t0
    for i in range(steps):
        k1, l1 = rhs(t, z)
        k2, l2 = rhs(t + h / 2, z + h / 2 * k1)
        k3, l3 = rhs(t + h / 2, z + h / 2 * k2)
        k4, l4 = rhs(t + h, z + h * k3)
        z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ld = ld + h / 6 * (l1 + 2 * l2 + 2 * l3 + l4)
        t = t0 + (i + 1) * h
        nrm = np.max(np.abs(z)) if z.size else 0.0
        if not np.isfinite(nrm) or nrm > BLOWUP_NORM:
            raise TrajectoryBlowUp(f"trajectory norm {nrm:.3g} at t={t:.6g} (step {i + 1}/{steps})")
    return FlowResult(z, ld)


def cov_continuous(field: VectorField, prior, x, T: float, steps: int, **kw) -> CovReport:
    """``log p(x) = log p(Z = z(T)) + ∫_0^T tr J_F dt`` with ``z(0) = x``."""
    res = integrate_flow(field, x, 0.0, T, steps, **kw)
    return CovReport({"log_prior": prior.log_prob(res.endpoint), "trace_integral": res.logdet}, formula="continuous")


def decode_continuous(field: VectorField, z, T: float, steps: int) -> np.ndarray:
    """Generate data by integrating from ``t = T`` back to ``0``."""
    return integrate_flow(field, z, T, 0.0, steps).endpoint


# --------------------------------------------------------------------------
# DDPM


@dataclass(frozen=True)
class DdpmSchedule:
    """Noise levels ``β_1..β_T`` and cumulative ``α_t = Π_{τ≤t} (1 − β_τ)``."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.betas, dtype=float))
        if b.ndim != 1 or b.size == 0 or np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must be a non-empty sequence in (0, 1)")
        object.__setattr__(self, "betas", b)

    @classmethod
    def constant(cls, beta: float, T: int) -> "DdpmSchedule":
        return cls(np.full(T, beta))

    @classmethod
    def linear(cls, beta_start: float, beta_end: float, T: int) -> "DdpmSchedule":
        return cls(np.linspace(beta_start, beta_end, T))

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return np.cumprod(1.0 - self.betas)

    def _check(self, t):
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside 1..{self.T}")

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check(t)
        return float(self.alphas[t - 1])


def ddpm_forward_kernel(schedule: DdpmSchedule, t: int, dim: int = 1) -> AffineGaussianKernel:
    """``p(z_t | z_{t−1}) = N(√(1−β_t) z_{t−1}, β_t I)``."""
    b = schedule.beta(t)
    return AffineGaussianKernel(np.sqrt(1.0 - b) * np.eye(dim), np.zeros(dim), np.full(dim, np.sqrt(b)))


def ddpm_perturbation(schedule: DdpmSchedule, t: int, dim: int = 1) -> AffineGaussianKernel:
    """``p(z_t | x) = N(√α_t x, (1 − α_t) I)``."""
    a = schedule.alpha(t)
    return AffineGaussianKernel(np.sqrt(a) * np.eye(dim), np.zeros(dim), np.full(dim, np.sqrt(1.0 - a)))


def ddpm_chain_sample(schedule: DdpmSchedule, x, t: int, rng) -> np.ndarray:
    """Run the forward kernels ``1..t`` starting from ``x``."""
    z = np.asarray(x, dtype=float)
    for s in range(1, t + 1):
        z = ddpm_forward_kernel(schedule, s, z.shape[-1]).sample(z, rng)
    return z


def ddpm_reverse_mean(schedule: DdpmSchedule, t: int, z, score) -> np.ndarray:
    """Mean of the reverse kernel ``(z_t + β_t s(z_t, t))/√(1 − β_t)``."""
    b = schedule.beta(t)
    return (z + b * score(z, t)) / np.sqrt(1.0 - b)


# --------------------------------------------------------------------------
# probability-flow ODE


def probability_flow_ode(drift: Callable, diffusion: Callable, score: Callable, dim: int) -> VectorField:
    """``F(t, z) = drift(t, z) − ½ diffusion(t)² · score(z, t)``."""

    def fn(t, z):
        g = diffusion(t)
        return drift(t, z) - 0.5 * g * g * score(z, t)

    return VectorField(fn, dim)


def vp_drift_diffusion(beta: Callable[[float], float]):
    """DDPM's continuous limit: drift ``−½β(t) z`` and diffusion ``√β(t)``."""
    return (lambda t, z: -0.5 * beta(t) * z), (lambda t: np.sqrt(beta(t)))


def gaussian_vp_score(mean: float, var: float, beta_integral: Callable[[float], float]):
    """Closed-form score of the diffused marginal of a 1-D ``N(mean, var)``.

    Under the variance-preserving dynamics the marginal at time ``t`` is
    ``N(mean e^{−B/2}, var e^{−B} + 1 − e^{−B})`` with ``B = ∫_0^t β``.
    """

    def score(z, t):
        B = beta_integral(t)
        m = mean * np.exp(-0.5 * B)
        v = var * np.exp(-B) + 1.0 - np.exp(-B)
        return -(z - m) / v

    return score


def gaussian_vp_marginal(mean: float, var: float, B: float) -> tuple[float, float]:
    return mean * np.exp(-0.5 * B), var * np.exp(-B) + 1.0 - np.exp(-B)
