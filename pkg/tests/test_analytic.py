"""Closed-form targets: the anisotropic Gaussian and the uniform annulus."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate as sint
from scipy import stats

from covkit.analytic import (
    DONUT,
    R_M,
    TWO_PI,
    AnisotropicGaussian,
    CircleDecoder,
    DonutNF,
    DonutTarget,
    DonutVaeDecoder,
    DonutVaeEncoder,
    arg,
    circular_distance,
    donut_density,
    donut_nf,
    donut_nf_inverse,
    donut_nf_logdet,
    donut_split_sample,
    gaussian_density,
)
from covkit.core.jacobian import jacobian
from covkit.core.linalg import logdet_lu
from covkit.core.rng import make_rng

# frozen closed forms
LOG_DONUT = -5.152063071081871  # ln(1/(55π))
LOG_GAUSS_ORIGIN = -1.1447298858494002  # ln(1/π)


def test_frozen_constants():
    assert LOG_DONUT == pytest.approx(np.log(1 / (55 * np.pi)), abs=1e-15)
    assert DONUT.log_density_value == pytest.approx(LOG_DONUT, abs=1e-15)
    assert DONUT.area_factor == 55.0
    assert R_M == pytest.approx(5.878787878787879, abs=1e-15)


class TestGaussian:
    def test_origin(self):
        assert gaussian_density(np.zeros(2)).value == pytest.approx(LOG_GAUSS_ORIGIN, abs=1e-15)
        assert AnisotropicGaussian().log_prob(np.zeros((1, 2)))[0] == pytest.approx(LOG_GAUSS_ORIGIN, abs=1e-15)

    def test_sample_moments(self):
        x = AnisotropicGaussian().sample(100_000, make_rng(0))
        np.testing.assert_allclose(x.std(0), [1.0, 0.5], rtol=0.01)


class TestDonut:
    def test_density_inside_and_outside(self):
        x = np.array([[R_M, 0.0], [0.0, 3.5], [0.0, 0.0], [8.5, 0.0], [0.0, 2.9]])
        v = donut_density(x).value
        np.testing.assert_allclose(v[:2], LOG_DONUT, atol=1e-15)
        assert np.all(v[2:] == -np.inf)

    def test_radial_law_integrates_to_one(self):
        val, _ = sint.quad(lambda r: np.exp(DONUT.radial_log_prob(np.array(r))), 3, 8)
        assert val == pytest.approx(1.0, abs=1e-12)

    def test_radius_sampler_matches_cdf(self):
        r = DONUT.sample_radius(20_000, make_rng(1))
        cdf = lambda v: (np.clip(v, 3, 8) ** 2 - 9) / 55
        assert stats.kstest(r, cdf).pvalue > 0.001

    def test_split_sample_angles_uniform(self):
        x, ang = donut_split_sample(20_000, make_rng(2))
        assert np.all(DONUT.inside(x))
        assert stats.kstest(ang / TWO_PI, "uniform").pvalue > 0.001
        np.testing.assert_allclose(arg(x), ang, atol=1e-12)

    def test_other_radii(self):
        t = DonutTarget(1.0, 2.0)
        assert t.log_density_value == pytest.approx(-np.log(3 * np.pi), abs=1e-15)
        assert t.manifold_radius == pytest.approx(2 * (8 - 1) / (3 * (4 - 1)), abs=1e-15)
        with pytest.raises(ValueError):
            DonutTarget(2.0, 1.0)

    def test_arg_range_and_circular_distance(self):
        a = arg(np.array([[1.0, -1e-12], [-1.0, 0.0], [0.0, 1.0]]))
        assert np.all((a >= 0) & (a < TWO_PI))
        assert circular_distance(0.1, TWO_PI - 0.1) == pytest.approx(0.2)


class TestDonutFlow:
    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_roundtrip(self, a, b):
        z = np.array([a, b])
        if np.hypot(a, b) < 1e-6:
            return
        np.testing.assert_allclose(donut_nf_inverse(donut_nf(z)), z, atol=1e-9 * (1 + np.hypot(a, b)))

    def test_logdet_closed_form_matches_lu(self):
        z = make_rng(3).standard_normal((50, 2))
        np.testing.assert_allclose(donut_nf_logdet(z), logdet_lu(jacobian(DonutNF(), z)), atol=1e-10)

    def test_pushes_gaussian_onto_uniform_annulus(self):
        z = make_rng(4).standard_normal((50_000, 2))
        x = donut_nf(z)
        assert np.all(DONUT.inside(x))
        r = np.linalg.norm(x, axis=-1)
        assert stats.kstest(r, lambda v: (np.clip(v, 3, 8) ** 2 - 9) / 55).pvalue > 0.001

    def test_domain(self):
        f = DonutNF()
        np.testing.assert_array_equal(f.in_domain(np.array([[5.0, 0.0], [1.0, 0.0], [8.0, 0.0]])), [True, False, False])


class TestCircleAndVae:
    def test_circle_roundtrip(self):
        z = np.linspace(0, TWO_PI, 7, endpoint=False)[:, None]
        d = CircleDecoder(R_M)
        np.testing.assert_allclose(d.inverse(d.forward(z)), z, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(d.forward(z), axis=-1), R_M)

    def test_encoder_normalized(self):
        enc = DonutVaeEncoder(np.deg2rad(5.0))
        x = np.array([[R_M, 0.0]])
        val, _ = sint.quad(lambda z: np.exp(enc.log_prob(np.array([[z]]), x))[0], 0, TWO_PI, points=[np.deg2rad(5), TWO_PI - np.deg2rad(5)], limit=200)
        assert val == pytest.approx(1.0, abs=1e-10)

    def test_decoder_normalized_over_wedge(self):
        a0 = np.deg2rad(5.0)
        dec = DonutVaeDecoder(a0, DONUT)
        z = np.array([[1.0]])

        def f(r, t):
            x = np.array([[r * np.cos(t), r * np.sin(t)]])
            return np.exp(dec.log_prob(x, z))[0] * r

        val, _ = sint.dblquad(f, 1 - a0, 1 + a0, 3, 8, epsabs=1e-12)
        assert val == pytest.approx(1.0, abs=1e-9)

    def test_encoder_samples_stay_in_wedge(self):
        enc = DonutVaeEncoder(np.deg2rad(5.0))
        x = DONUT.sample(1000, make_rng(5))
        z = enc.sample(x, make_rng(6))
        assert z.shape == (1000, 1)
        assert np.all(circular_distance(z[:, 0], arg(x)) <= np.deg2rad(5.0) + 1e-12)
