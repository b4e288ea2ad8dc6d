"""Change of variables for stochastic encoder/decoder pairs.

When both directions are conditional distributions, ``log p(x)`` can be read
off Bayes' rule at any code ``z`` the encoder can produce:

    log p(x) = log p(z) + log p(x | z) − log p(z | x)

The right-hand side is constant in ``z`` exactly when encoder and decoder are
consistent with each other, which is what the diagnostics below measure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate as sint
from scipy.special import logsumexp

from .core import dual as dm
from .core.integrate import quad_integrate_1d
from .core.jacobian import jacobian
from .core.linalg import logdet_lu
from .core.report import CovReport
from .distributions import DiagonalGaussian, GaussianMixture, StandardNormal
from .kernels import AffineGaussianKernel, GaussianKernel


class OutsideSupportError(ValueError):
    pass


def _log_mean_exp(a, axis=0):
    a = np.asarray(a, dtype=float)
    return logsumexp(a, axis=axis) - np.log(a.shape[axis])


def _lme_with_se(a):
    """Log-mean-exp of samples and the delta-method standard error of it."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    lme = _log_mean_exp(a)
    if not np.isfinite(lme):
        return lme, np.inf
    w = np.exp(a - lme)  # samples of p / p̂, mean one
    se = np.std(w, ddof=1) / np.sqrt(n)
    return float(lme), float(se)


# --------------------------------------------------------------------------
# marginalization and mixtures


def cov_decoder_marginalization(
    decoder,
    prior,
    x,
    *,
    n: int | None = None,
    rng: np.random.Generator | None = None,
    method: str = "auto",
    bounds=None,
    points=None,
    tol: float = 1e-10,
) -> CovReport:
    """``log p(x) = log E_{z ~ p(Z)} p(x | z)``.

    ``method="quad"`` integrates ``p(z) p(x|z)`` by adaptive quadrature (code
    dimension 1 or 2); ``"mc"`` averages over ``n`` prior draws and reports a
    standard error. ``"auto"`` picks quadrature for code dim ≤ 2 unless ``n``
    is given. ``bounds`` overrides the prior's support, ``points`` lists known
    discontinuities of the 1-D integrand.
    """
    x = np.asarray(x, dtype=float)
    cdim = prior.dim
    if method == "auto":
        method = "quad" if (n is None and cdim <= 2) else "mc"
    if method == "mc":
        if n is None or rng is None:
            raise ValueError("Monte-Carlo marginalization needs n and rng")
        z = prior.sample(n, rng)
        xs = np.atleast_2d(x)
        vals, ses = [], []
        for xi in xs:
            lp = decoder.log_prob(np.broadcast_to(xi, (n, xi.size)), z)
            v, se = _lme_with_se(lp)
            vals.append(v)
            ses.append(se)
        shape = x.shape[:-1]
        return CovReport(
            {"log_marginal": np.reshape(vals, shape) if shape else vals[0]},
            std_error=np.reshape(ses, shape) if shape else ses[0],
            formula="decoder_marginalization",
        )
    if method != "quad":
        raise ValueError(f"unknown method {method!r}")
    if cdim > 2:
        raise ValueError("quadrature marginalization supports code dimension ≤ 2")
    lo, hi = bounds if bounds is not None else prior.support()
    lo, hi = np.atleast_1d(lo), np.atleast_1d(hi)
    out = []
    for xi in np.atleast_2d(x):
        if cdim == 1:

            def integrand(z, xi=xi):
                zz = np.array([[z]])
                return float(np.exp(prior.log_prob(zz) + decoder.log_prob(xi[None], zz))[0])

            val = quad_integrate_1d(integrand, float(lo[0]), float(hi[0]), tol, points=points)
        else:

            def integrand2(z2, z1, xi=xi):
                zz = np.array([[z1, z2]])
                return float(np.exp(prior.log_prob(zz) + decoder.log_prob(xi[None], zz))[0])

            val, _ = sint.dblquad(integrand2, lo[0], hi[0], lo[1], hi[1], epsabs=tol, epsrel=tol)
        with np.errstate(divide="ignore"):
            out.append(np.log(val) if val > 0 else -np.inf)
    shape = x.shape[:-1]
    return CovReport({"log_marginal": np.reshape(out, shape) if shape else float(out[0])}, formula="decoder_marginalization")


def cov_gmm(gmm: GaussianMixture, x) -> CovReport:
    """``log Σ_k p(Z=k) N(x | μ_k, Σ_k)`` by log-sum-exp."""
    return CovReport({"log_mixture": gmm.log_prob(x)}, formula="gmm")


def gmm_posterior(gmm: GaussianMixture, x) -> np.ndarray:
    """``p(Z=k | x)`` by Bayes' rule; rows sum to one."""
    return gmm.posterior(x)


# --------------------------------------------------------------------------
# Bayes-rule CoV, ELBO and consistency diagnostics


def cov_bayes(prior, decoder, encoder, x, z) -> CovReport:
    """``log p(z) + log p(x | z) − log p(z | x)`` at a code the encoder supports."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    le = np.asarray(encoder.log_prob(z, x), dtype=float)
    if np.any(~np.isfinite(le)):
        raise OutsideSupportError("code lies outside the encoder's support for this x")
    return CovReport(
        {
            "log_prior": prior.log_prob(z),
            "log_decoder": decoder.log_prob(x, z),
            "neg_log_encoder": -le,
        },
        formula="bayes",
    )


def _rhs_samples(prior, decoder, encoder, x, n, rng):
    x = np.asarray(x, dtype=float)
    xs = np.broadcast_to(x, (n, x.shape[-1]))
    z = encoder.sample(xs, rng)
    return prior.log_prob(z) + decoder.log_prob(xs, z) - encoder.log_prob(z, xs)


class ElboResult(NamedTuple):
    elbo: float
    std_error: float
    kl_gap: float | None
    log_px: float  # importance-sampled log p(x) from the same draws


def elbo(prior, decoder, encoder, x, n: int, rng, log_px: float | None = None) -> ElboResult:
    """Monte-Carlo ELBO ``E_{z~p(z|x)}[log p(z) + log p(x|z) − log p(z|x)]``.

    With a known ``log_px`` the KL gap ``log p(x) − ELBO`` is returned too.
    """
    r = _rhs_samples(prior, decoder, encoder, x, n, rng)
    e = float(np.mean(r))
    se = float(np.std(r, ddof=1) / np.sqrt(n))
    gap = None if log_px is None else float(log_px - e)
    return ElboResult(e, se, gap, float(_log_mean_exp(r)))


class DiagnosticResult(NamedTuple):
    value: float
    std_error: float


def _variance_score(r):
    m = np.max(r)
    w = np.exp(r - m)
    mu = np.mean(w)
    return float(np.var(w, ddof=1) / (2.0 * mu * mu))


def kl_variance_diagnostic(prior, decoder, encoder, x, n: int, rng, n_batches: int = 20) -> DiagnosticResult:
    """``Var[exp RHS] / (2 p̂(x)²)`` over encoder draws; zero for consistent pairs.

    ``p̂(x)`` is the mean of the same draws. The standard error comes from
    batch means over ``n_batches`` equal slices.
    """
    if n < 2 * n_batches:
        raise ValueError("need at least two draws per batch")
    r = _rhs_samples(prior, decoder, encoder, x, n, rng)
    val = _variance_score(r)
    m = n // n_batches
    per = [_variance_score(r[i * m : (i + 1) * m]) for i in range(n_batches)]
    return DiagnosticResult(val, float(np.std(per, ddof=1) / np.sqrt(n_batches)))


def z_spread(prior, decoder, encoder, x, n: int, rng) -> float:
    """Max minus min of the Bayes-rule value over ``n`` encoder-sampled codes."""
    r = _rhs_samples(prior, decoder, encoder, x, n, rng)
    return float(np.max(r) - np.min(r))


# --------------------------------------------------------------------------
# Markov chains


@dataclass
class MarkovChainModel:
    """Forward kernels ``p(z_t | z_{t−1})`` (``z_0 = x``), reverse kernels
    ``p(z_{t−1} | z_t)`` and the terminal prior ``p(z_T)``."""

    forward: Sequence
    reverse: Sequence
    prior: object

    def __post_init__(self):
        if len(self.forward) != len(self.reverse) or not self.forward:
            raise ValueError("forward and reverse chains must have the same non-zero length")
        for t, (f, r) in enumerate(zip(self.forward, self.reverse)):
            if f.target_dim != r.condition_dim or f.condition_dim != r.target_dim:
                raise ValueError(f"kernel dimensions disagree at step {t + 1}")

    @property
    def T(self) -> int:
        return len(self.forward)

    def sample_path(self, x, rng) -> list[np.ndarray]:
        path = []
        z = np.asarray(x, dtype=float)
        for k in self.forward:
            z = k.sample(z, rng)
            path.append(z)
        return path


def cov_markov_chain(model: MarkovChainModel, x, rng=None, path=None) -> CovReport:
    """``log p(z_T) + Σ_t [log p(z_{t−1} | z_t) − log p(z_t | z_{t−1})]``.

    ``path`` (codes ``z_1..z_T``) is drawn from the forward chain when not
    supplied.
    """
    x = np.asarray(x, dtype=float)
    if path is None:
        if rng is None:
            raise ValueError("need an rng or an explicit path")
        path = model.sample_path(x, rng)
    if len(path) != model.T:
        raise ValueError("path length does not match the chain")
    states = [x] + [np.asarray(p, dtype=float) for p in path]
    terms = {"log_prior": model.prior.log_prob(states[-1])}
    for t in range(1, model.T + 1):
        lf = np.asarray(model.forward[t - 1].log_prob(states[t], states[t - 1]), dtype=float)
        if np.any(~np.isfinite(lf)):
            raise OutsideSupportError(f"forward step {t} has zero density on this path")
        terms[f"log_reverse_{t}"] = model.reverse[t - 1].log_prob(states[t - 1], states[t])
        terms[f"neg_log_forward_{t}"] = -lf
    return CovReport(terms, formula="markov_chain")


def markov_path_spread(model: MarkovChainModel, x, n_paths: int, rng) -> float:
    """Max minus min of the chain CoV over independent encoder paths."""
    x = np.asarray(x, dtype=float)
    xs = np.broadcast_to(x, (n_paths, x.shape[-1]))
    v = cov_markov_chain(model, xs, rng).value
    return float(np.max(v) - np.min(v))


def linear_gaussian_chain(mean: float, var: float, coefs, noise_vars, exact_prior: bool = True) -> MarkovChainModel:
    """1-D chain ``z_t = a_t z_{t−1} + N(0, b_t)`` started at ``N(mean, var)``.

    Reverse kernels are the exact Gaussian conditionals of the joint; with
    ``exact_prior`` the terminal prior is the exact marginal of ``z_T``, so
    the chain CoV reproduces ``log N(x | mean, var)`` on every path.
    """
    coefs = np.asarray(coefs, dtype=float)
    noise_vars = np.asarray(noise_vars, dtype=float)
    m, v = float(mean), float(var)
    fwd, rev = [], []
    for a, b in zip(coefs, noise_vars):
        m_next, v_next = a * m, a * a * v + b
        c = a * v  # Cov(z_{t-1}, z_t)
        fwd.append(AffineGaussianKernel([[a]], [0.0], [np.sqrt(b)]))
        g = c / v_next
        rev.append(AffineGaussianKernel([[g]], [m - g * m_next], [np.sqrt(v - c * c / v_next)]))
        m, v = m_next, v_next
    prior = DiagonalGaussian([m], [np.sqrt(v)]) if exact_prior else StandardNormal(1)
    return MarkovChainModel(fwd, rev, prior)


# --------------------------------------------------------------------------
# VAE


@dataclass
class VaeModel:
    """Mean-field Gaussian encoder and decoder with a standard-normal prior.

    Each moment function maps a batch ``(..., in_dim)`` to ``(..., out_dim)``.
    """

    mu_E: Callable
    sigma_E: Callable
    mu_D: Callable
    sigma_D: Callable
    data_dim: int
    code_dim: int

    @property
    def prior(self):
        return StandardNormal(self.code_dim)

    @property
    def encoder(self) -> GaussianKernel:
        return GaussianKernel(self.mu_E, self.sigma_E, self.code_dim, self.data_dim)

    @property
    def decoder(self) -> GaussianKernel:
        return GaussianKernel(self.mu_D, self.sigma_D, self.data_dim, self.code_dim)

    @classmethod
    def affine(cls, A_E, b_E, s_E, A_D, b_D, s_D) -> "VaeModel":
        enc = AffineGaussianKernel(A_E, b_E, s_E)
        dec = AffineGaussianKernel(A_D, b_D, s_D)
        model = cls(
            enc.mean,
            lambda x, s=enc.std: s,
            dec.mean,
            lambda z, s=dec.std: s,
            enc.condition_dim,
            enc.target_dim,
        )
        model.affine_params = (enc, dec)
        return model


def cov_vae(model: VaeModel, x, z) -> CovReport:
    """Bayes-rule CoV specialised to diagonal Gaussians."""
    rep = cov_bayes(model.prior, model.decoder, model.encoder, x, z)
    rep.formula = "vae"
    return rep


# --------------------------------------------------------------------------
# conditional flows (noise outsourcing)


class ConditionalAffine:
    """``x = exp(log_scale(c)) ⊙ s + shift(c)``, invertible in ``s`` for every ``c``."""

    def __init__(self, dim: int, cond_dim: int, log_scale: Callable, shift: Callable):
        self.dim = dim
        self.cond_dim = cond_dim
        self.log_scale = log_scale
        self.shift = shift

    def forward(self, s, c):
        return s * dm.exp(self.log_scale(c)) + self.shift(c)

    def inverse(self, x, c):
        return (x - self.shift(c)) * dm.exp(-self.log_scale(c))

    def log_abs_det_forward(self, s, c):
        ls = np.broadcast_to(np.asarray(self.log_scale(np.asarray(c, dtype=float)), dtype=float), np.shape(s))
        return np.sum(ls, axis=-1)

    @classmethod
    def linear(cls, A_scale, b_scale, A_shift, b_shift) -> "ConditionalAffine":
        A_scale = np.atleast_2d(np.asarray(A_scale, dtype=float))
        A_shift = np.atleast_2d(np.asarray(A_shift, dtype=float))
        return cls(
            A_scale.shape[0],
            A_scale.shape[1],
            lambda c: dm.linear(c, A_scale, b_scale),
            lambda c: dm.linear(c, A_shift, b_shift),
        )


class ConditionalBijection:
    """Generic conditional bijection from callables; determinant via dual numbers."""

    def __init__(self, fwd: Callable, inv: Callable, dim: int, cond_dim: int):
        self.fwd, self.inv = fwd, inv
        self.dim, self.cond_dim = dim, cond_dim

    def forward(self, s, c):
        return self.fwd(s, c)

    def inverse(self, x, c):
        return self.inv(x, c)

    def log_abs_det_forward(self, s, c):
        c = np.asarray(c, dtype=float)
        J = jacobian(lambda u: self.fwd(u, c), s)
        return logdet_lu(J)


def cov_conditional_bijective(g, noise_prior, x, z) -> CovReport:
    """``log p(x | z) = log p(S = g⁻¹(x; z)) − log|det ∂g/∂s|`` at that ``s``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    s = np.asarray(g.inverse(x, z), dtype=float)
    ld = np.asarray(g.log_abs_det_forward(s, z), dtype=float)
    if np.any(~np.isfinite(ld)):
        raise ArithmeticError("singular conditional Jacobian")
    return CovReport({"log_noise": noise_prior.log_prob(s), "neg_log_det": -ld}, formula="conditional_bijective")


@dataclass
class ConditionalFlowPair:
    """Decoder ``x = g(s_x; z)`` and encoder ``z = f(s_z; x)`` with their noise priors."""

    decoder: object
    decoder_noise: object
    encoder: object
    encoder_noise: object

    def decoder_kernel(self):
        return _FlowKernel(self.decoder, self.decoder_noise)

    def encoder_kernel(self):
        return _FlowKernel(self.encoder, self.encoder_noise)


@dataclass
class _FlowKernel:
    flow: object
    noise: object

    @property
    def target_dim(self):
        return self.flow.dim

    @property
    def condition_dim(self):
        return self.flow.cond_dim

    def log_prob(self, target, condition):
        return cov_conditional_bijective(self.flow, self.noise, target, condition).value

    def sample(self, condition, rng):
        c = np.asarray(condition, dtype=float)
        n = int(np.prod(c.shape[:-1])) if c.ndim > 1 else 1
        s = self.noise.sample(n, rng).reshape(c.shape[:-1] + (self.flow.dim,))
        return np.asarray(self.flow.forward(s, c), dtype=float)


def cov_conditional_nf_pair(pair: ConditionalFlowPair, prior, x, z) -> CovReport:
    """Bayes-rule CoV with both conditionals expanded through their flows."""
    dec = cov_conditional_bijective(pair.decoder, pair.decoder_noise, x, z)
    enc = cov_conditional_bijective(pair.encoder, pair.encoder_noise, z, x)
    return CovReport(
        {
            "log_prior": prior.log_prob(np.asarray(z, dtype=float)),
            "log_decoder_noise": dec.terms["log_noise"],
            "neg_log_det_decoder": dec.terms["neg_log_det"],
            "neg_log_encoder_noise": -enc.terms["log_noise"],
            "log_det_encoder": -enc.terms["neg_log_det"],
        },
        formula="conditional_nf_pair",
    )


# --------------------------------------------------------------------------
# augmented flows


def cov_augmented(flow, prior, noise_prior, x, K: int, rng) -> CovReport:
    """Importance-sampled ``log p(x)`` for a bijective flow on ``[x, y]``.

    Averages ``p_flow(x, y_k) / p*(y_k)`` over ``K`` draws ``y_k ~ p*(Y)``.
    """
    from .bijective import cov_bijective

    if K < 1:
        raise ValueError("K must be at least 1")
    x = np.asarray(x, dtype=float)
    y = noise_prior.sample(K, rng)
    xy = np.concatenate([np.broadcast_to(x, (K, x.shape[-1])), y], axis=-1)
    lw = cov_bijective(flow, prior, xy).value - noise_prior.log_prob(y)
    v, se = _lme_with_se(lw)
    return CovReport({"log_importance_mean": v}, std_error=se, formula="augmented")
