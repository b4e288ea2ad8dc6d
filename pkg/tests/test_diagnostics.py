"""Consistency checks, normalization, energy distance, histogram KL and trade-off metrics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from covkit import zoo
from covkit.analytic import AnisotropicGaussian
from covkit.core.rng import make_rng
from covkit.diagnostics import (
    ConsistencyReport,
    check_deterministic_consistency,
    check_normalization,
    check_stochastic_consistency,
    energy_distance,
    histogram_kl,
    tradeoff_metrics,
)
from covkit.kernels import AffineGaussianKernel

TARGET = AnisotropicGaussian()


class TestConsistency:
    def test_scaled_decoder_roundtrip(self):
        z = make_rng(0).standard_normal((100, 2))
        rep = check_deterministic_consistency(lambda x: x, lambda c: 1.01 * c, codes=z, points=z)
        assert rep.max_roundtrip_code == pytest.approx(0.01 * np.max(np.linalg.norm(z, axis=-1)), rel=1e-10)
        assert rep.max_roundtrip_data == pytest.approx(rep.max_roundtrip_code, rel=1e-10)
        assert rep.n_codes == rep.n_points == 100

    def test_report_defaults(self):
        d = ConsistencyReport().as_dict()
        assert d["max_roundtrip_code"] is None and d["n_points"] == 0

    def test_stochastic_pair(self):
        p = zoo.gauss_stochastic(0.5)
        good = check_stochastic_consistency(p.prior, p.encoder, p.decoder, TARGET, 2000, make_rng(1))
        assert good.max_log_discrepancy < 1e-12
        bad_enc = AffineGaussianKernel([[0.5, 0.0]], [0.0], [1.2 * np.sqrt(0.75)])
        bad = check_stochastic_consistency(p.prior, bad_enc, p.decoder, TARGET, 2000, make_rng(1))
        assert bad.mean_log_discrepancy > 0.05

    def test_normalization(self):
        res = check_normalization(TARGET.log_prob, [-7, -4], [7, 4], 200_000, make_rng(2))
        assert abs(res.estimate - 1.0) < 4 * res.std_error


class TestEnergyDistance:
    def test_point_masses(self):
        x = np.zeros((10, 2))
        y = np.tile([3.0, 4.0], (7, 1))
        assert energy_distance(x, y) == pytest.approx(10.0, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (12, 2), elements=st.floats(-5, 5)), arrays(np.float64, (9, 2), elements=st.floats(-5, 5)))
    def test_symmetric_non_negative(self, x, y):
        a, b = energy_distance(x, y), energy_distance(y, x)
        assert a >= 0 and a == pytest.approx(b, abs=1e-9)
        assert energy_distance(x, x) == pytest.approx(0.0, abs=1e-6)

    def test_detects_shift(self):
        x = TARGET.sample(2000, make_rng(3))
        assert energy_distance(x, x + [1.0, 0.0]) > 10 * energy_distance(x, TARGET.sample(2000, make_rng(4)))


class TestHistogramKl:
    def test_identical_and_shifted(self):
        x = TARGET.sample(5000, make_rng(5))
        assert histogram_kl(x, x, [-4, -2], [4, 2]) == pytest.approx(0.0, abs=1e-15)
        assert histogram_kl(x, x + [1.0, 0.0], [-4, -2], [4, 2]) > 0.1


class TestTradeoff:
    def test_identity_reconstruction(self):
        m = tradeoff_metrics(TARGET, lambda x, rng: x, 4000, make_rng(6), rate=None)
        assert m.distortion == 0.0 and m.distortion_se == 0.0
        assert m.divergence < 0.05

    def test_collapse_has_distortion_and_divergence(self):
        m = tradeoff_metrics(TARGET, lambda x, rng: np.zeros_like(x), 4000, make_rng(7), rate=0.0)
        assert m.distortion == pytest.approx(1.25, abs=0.1)
        assert m.divergence > 0.5
        assert m.rate == 0.0
