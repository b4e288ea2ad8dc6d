"""Stochastic pairs: mixtures, Bayes-rule evaluation, ELBO, chains, VAEs, conditional flows."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from covkit import zoo
from covkit.analytic import DONUT, AnisotropicGaussian
from covkit.bijective import Affine
from covkit.core import dual as dm
from covkit.core.rng import make_rng
from covkit.distributions import DiagonalGaussian, GaussianMixture, StandardNormal
from covkit.kernels import AffineGaussianKernel
from covkit.stochastic import (
    ConditionalAffine,
    ConditionalBijection,
    ConditionalFlowPair,
    OutsideSupportError,
    VaeModel,
    cov_augmented,
    cov_bayes,
    cov_conditional_bijective,
    cov_conditional_nf_pair,
    cov_decoder_marginalization,
    cov_gmm,
    cov_markov_chain,
    cov_vae,
    elbo,
    gmm_posterior,
    kl_variance_diagnostic,
    linear_gaussian_chain,
    markov_path_spread,
    z_spread,
)

RHO = 0.6
TARGET = AnisotropicGaussian()


class TestMixture:
    gmm = GaussianMixture([0.2, 0.5, 0.3], [[0, 0], [3, 1], [-2, 2]], [[1, 1], [0.5, 2], [1.5, 0.3]])

    def test_log_density(self):
        x = make_rng(0).standard_normal((20, 2)) * 2
        ref = sum(w * stats.multivariate_normal(m, np.diag(s**2)).pdf(x) for w, m, s in zip(self.gmm.weights, self.gmm.means, self.gmm.stds))
        np.testing.assert_allclose(cov_gmm(self.gmm, x).value, np.log(ref), atol=1e-12)

    def test_posterior_rows(self):
        x = make_rng(1).standard_normal((20, 2)) * 2
        p = gmm_posterior(self.gmm, x)
        np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-14)
        assert gmm_posterior(self.gmm, np.array([[3.0, 1.0]]))[0].argmax() == 1

    def test_far_points_stay_finite(self):
        v = cov_gmm(self.gmm, np.array([[60.0, -60.0]])).value
        assert np.isfinite(v).all()


class TestBayesRule:
    pair = zoo.gauss_stochastic(RHO)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-4, 4))
    def test_any_code_gives_the_target(self, a, b, z):
        x = np.array([[a, b]])
        v = cov_bayes(self.pair.prior, self.pair.decoder, self.pair.encoder, x, np.array([[z]])).value
        assert v[0] == pytest.approx(TARGET.log_prob(x)[0], abs=1e-10)

    def test_code_outside_encoder_support(self):
        p = zoo.donut_stochastic(5.0, DONUT)
        x = np.array([[5.0, 0.0]])
        with pytest.raises(OutsideSupportError):
            cov_bayes(p.prior, p.decoder, p.encoder, x, np.array([[np.pi]]))

    def test_quadrature_and_mc_marginalization(self):
        x = TARGET.sample(3, make_rng(2))
        q = cov_decoder_marginalization(self.pair.decoder, self.pair.prior, x, bounds=([-12], [12])).value
        np.testing.assert_allclose(q, TARGET.log_prob(x), atol=1e-9)
        mc = cov_decoder_marginalization(self.pair.decoder, self.pair.prior, x, n=100_000, rng=make_rng(3))
        assert np.all(np.abs(mc.value - TARGET.log_prob(x)) < 4 * mc.std_error)

    def test_mc_needs_rng(self):
        with pytest.raises(ValueError):
            cov_decoder_marginalization(self.pair.decoder, self.pair.prior, np.zeros((1, 2)), method="mc", n=10)


class TestElbo:
    x = np.array([0.8, -0.4])

    def test_consistent_pair_is_tight(self):
        p = zoo.gauss_stochastic(RHO)
        lp = TARGET.log_prob(self.x[None])[0]
        r = elbo(p.prior, p.decoder, p.encoder, self.x, 1000, make_rng(4), log_px=lp)
        assert abs(r.kl_gap) < 1e-12
        assert kl_variance_diagnostic(p.prior, p.decoder, p.encoder, self.x, 1000, make_rng(5)).value < 1e-20
        assert z_spread(p.prior, p.decoder, p.encoder, self.x, 1000, make_rng(6)) < 1e-12

    def test_gap_is_gaussian_kl(self):
        p = zoo.gauss_stochastic(RHO)
        s_true, s_enc = np.sqrt(1 - RHO**2), 1.5 * np.sqrt(1 - RHO**2)
        enc = AffineGaussianKernel([[RHO, 0.0]], [0.0], [s_enc])
        lp = TARGET.log_prob(self.x[None])[0]
        r = elbo(p.prior, p.decoder, enc, self.x, 200_000, make_rng(7), log_px=lp)
        kl = np.log(s_true / s_enc) + s_enc**2 / (2 * s_true**2) - 0.5
        assert abs(r.kl_gap - kl) < 4 * r.std_error
        assert kl_variance_diagnostic(p.prior, p.decoder, enc, self.x, 20_000, make_rng(8)).value > 0.01

    def test_diagnostic_batch_guard(self):
        p = zoo.gauss_stochastic(RHO)
        with pytest.raises(ValueError):
            kl_variance_diagnostic(p.prior, p.decoder, p.encoder, self.x, 10, make_rng(0), n_batches=20)


class TestMarkovChain:
    model = linear_gaussian_chain(0.5, 2.0, [0.9, 0.7, 0.5], [0.2, 0.4, 0.6])

    def test_every_path_recovers_the_start_density(self):
        x = np.array([[1.3]])
        exact = stats.norm(0.5, np.sqrt(2.0)).logpdf(1.3)
        for seed in range(5):
            assert cov_markov_chain(self.model, x, rng=make_rng(seed)).value[0] == pytest.approx(exact, abs=1e-12)
        assert markov_path_spread(self.model, x, 50, make_rng(9)) < 1e-12

    def test_inexact_prior_varies_with_path(self):
        m = linear_gaussian_chain(0.5, 2.0, [0.9, 0.7], [0.2, 0.4], exact_prior=False)
        assert markov_path_spread(m, np.array([[1.3]]), 50, make_rng(10)) > 1e-3

    def test_path_validation(self):
        with pytest.raises(ValueError):
            cov_markov_chain(self.model, np.array([[0.0]]), path=[np.zeros((1, 1))])
        with pytest.raises(ValueError):
            cov_markov_chain(self.model, np.array([[0.0]]))


class TestVae:
    def test_affine_vae_matches_target(self):
        s = np.sqrt(1 - RHO**2)
        m = VaeModel.affine([[RHO, 0.0]], [0.0], [s], [[RHO], [0.0]], [0.0, 0.0], [s, 0.5])
        x = TARGET.sample(10, make_rng(11))
        z = m.encoder.sample(x, make_rng(12))
        rep = cov_vae(m, x, z)
        assert rep.formula == "vae"
        np.testing.assert_allclose(rep.value, TARGET.log_prob(x), atol=1e-12)


class TestConditionalFlows:
    def test_conditional_affine_is_gaussian(self):
        g = ConditionalAffine.linear([[0.5]], [0.1], [[2.0]], [-1.0])
        c = np.array([[0.4], [-1.0]])
        x = np.array([[0.3], [2.0]])
        sd = np.exp(0.5 * c[:, 0] + 0.1)
        ref = stats.norm(2 * c[:, 0] - 1, sd).logpdf(x[:, 0])
        np.testing.assert_allclose(cov_conditional_bijective(g, StandardNormal(1), x, c).value, ref, atol=1e-13)

    def test_generic_bijection_agrees(self):
        fwd = lambda s, c: s * dm.exp(0.5 * c + 0.1) + 2 * c - 1
        inv = lambda x, c: (x - 2 * c + 1) * np.exp(-(0.5 * c + 0.1))
        g = ConditionalBijection(fwd, inv, 1, 1)
        c = np.array([[0.4], [-1.0]])
        x = np.array([[0.3], [2.0]])
        ref = stats.norm(2 * c[:, 0] - 1, np.exp(0.5 * c[:, 0] + 0.1)).logpdf(x[:, 0])
        np.testing.assert_allclose(cov_conditional_bijective(g, StandardNormal(1), x, c).value, ref, atol=1e-12)

    def test_flow_pair_matches_target(self):
        s = np.sqrt(1 - RHO**2)
        dec = ConditionalAffine(2, 1, lambda z: dm.linear(z, np.zeros((2, 1)), np.log([s, 0.5])), lambda z: dm.linear(z, [[RHO], [0.0]]))
        enc = ConditionalAffine(1, 2, lambda x: dm.linear(x, np.zeros((1, 2)), [np.log(s)]), lambda x: dm.linear(x, [[RHO, 0.0]]))
        pair = ConditionalFlowPair(dec, StandardNormal(2), enc, StandardNormal(1))
        x = TARGET.sample(10, make_rng(13))
        z = pair.encoder_kernel().sample(x, make_rng(14))
        np.testing.assert_allclose(cov_conditional_nf_pair(pair, StandardNormal(1), x, z).value, TARGET.log_prob(x), atol=1e-12)


class TestAugmented:
    def test_matching_noise_prior_is_exact(self):
        # identity flow with the true auxiliary law: every weight equals p(x)
        rep = cov_augmented(Affine(np.eye(2)), StandardNormal(2), StandardNormal(1), np.array([0.4]), 5, make_rng(15))
        assert rep.value == pytest.approx(stats.norm.logpdf(0.4), abs=1e-13)

    def test_importance_estimate(self):
        flow = Affine(np.array([[1.2, 0.0], [0.7, 0.5]]))
        rep = cov_augmented(flow, StandardNormal(2), DiagonalGaussian([0.0], [1.5]), np.array([0.4]), 50_000, make_rng(16))
        assert abs(rep.value - stats.norm(0, 1.2).logpdf(0.4)) < 4 * rep.std_error

    def test_k_positive(self):
        with pytest.raises(ValueError):
            cov_augmented(Affine(np.eye(2)), StandardNormal(2), StandardNormal(1), np.array([0.4]), 0, make_rng(0))
