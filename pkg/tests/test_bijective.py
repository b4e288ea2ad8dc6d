"""Layers, composites, triangular maps and the finite-composition CoV evaluators."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from covkit import zoo
from covkit.analytic import DONUT, AnisotropicGaussian
from covkit.bijective import (
    ActNorm,
    Affine,
    AffineCoupling,
    Composite,
    Elementwise,
    IncompressibleFlow,
    Mlp,
    NonMonotoneError,
    Orthogonal,
    Permutation,
    ScalarBijection,
    TriangularComponent,
    TriangularMap,
    VqFlowModel,
    affine_autoregressive,
    coupling_stack,
    cov_bijective,
    cov_gmm_flow,
    cov_incompressible,
    cov_vq_flow,
    knothe_rosenblatt_apply,
)
from covkit.core.jacobian import jacobian
from covkit.core.linalg import logdet_lu
from covkit.core.rng import make_rng
from covkit.distributions import GaussianMixture, StandardNormal


def _layers():
    rng = make_rng(7)
    return [
        Affine(rng.standard_normal((3, 3)) + 2 * np.eye(3), rng.standard_normal(3)),
        Orthogonal(np.linalg.qr(rng.standard_normal((3, 3)))[0]),
        ActNorm(rng.standard_normal(3), rng.standard_normal(3)),
        Permutation([1, 2, 0]),
        AffineCoupling(3, 1, Mlp.random(rng, 1, 6, 2), Mlp.random(rng, 1, 6, 2)),
        AffineCoupling(3, 2, Mlp.random(rng, 2, 6, 1), Mlp.random(rng, 2, 6, 1), volume_preserving=True),
        affine_autoregressive(0.2 * rng.standard_normal(3), np.tril(rng.standard_normal((3, 3)), -1), rng.standard_normal(3)),
        coupling_stack(rng, 3, 4),
    ]


@pytest.mark.parametrize("layer", _layers(), ids=lambda l: type(l).__name__)
class TestLayers:
    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (5, 3), elements=st.floats(-4, 4)))
    def test_roundtrip(self, layer, z):
        np.testing.assert_allclose(layer.inverse(layer.forward(z)), z, atol=1e-9)

    def test_logdet_matches_lu(self, layer):
        z = make_rng(8).standard_normal((10, 3))
        np.testing.assert_allclose(layer.log_abs_det_forward(z), logdet_lu(jacobian(layer, z)), atol=1e-10)
        x = np.asarray(layer.forward(z))
        np.testing.assert_allclose(layer.log_abs_det_inverse(x), -logdet_lu(jacobian(layer, z)), atol=1e-10)


class TestCovBijective:
    def test_gaussian_pair_reproduces_target(self):
        x = AnisotropicGaussian().sample(100, make_rng(9))
        v = cov_bijective(zoo.gauss_bijective(), StandardNormal(2), x).value
        np.testing.assert_allclose(v, AnisotropicGaussian().log_prob(x), atol=1e-13)

    def test_three_forms_agree(self):
        flow = coupling_stack(make_rng(10), 4, 3)
        x = np.asarray(flow.forward(make_rng(11).standard_normal((20, 4))))
        vals = [cov_bijective(flow, StandardNormal(4), x, form=f).value for f in ("encoder", "decoder", "jacobian")]
        np.testing.assert_allclose(vals[0], vals[1], atol=1e-10)
        np.testing.assert_allclose(vals[0], vals[2], atol=1e-10)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            cov_bijective(Affine(np.eye(2)), StandardNormal(2), np.zeros((3, 3)))

    def test_singular_affine_rejected(self):
        with pytest.raises(Exception):
            cov_bijective(Affine(np.array([[1.0, 2.0], [2.0, 4.0]])), StandardNormal(2), np.zeros((1, 2)))


class TestIncompressible:
    def test_matches_general_formula(self):
        rng = make_rng(12)
        layers = [
            Orthogonal.rotation_2d(0.7),
            AffineCoupling(2, 1, Mlp.random(rng, 1, 4, 1), Mlp.random(rng, 1, 4, 1), volume_preserving=True),
            Permutation([1, 0]),
        ]
        flow = IncompressibleFlow(layers)
        x = rng.standard_normal((15, 2))
        np.testing.assert_allclose(cov_incompressible(flow, StandardNormal(2), x).value, cov_bijective(Composite(layers), StandardNormal(2), x).value, atol=1e-12)

    def test_rejects_volume_changing_layer(self):
        with pytest.raises(ValueError):
            IncompressibleFlow([ActNorm([0.1, 0.0])])


class TestTriangular:
    def test_jacobian_is_lower_triangular_with_matching_diagonal(self):
        rng = make_rng(13)
        t = affine_autoregressive(rng.standard_normal(4), rng.standard_normal((4, 4)))
        z = rng.standard_normal((6, 4))
        J = jacobian(t, z)
        np.testing.assert_allclose(np.triu(J, 1), 0, atol=0)
        np.testing.assert_allclose(np.diagonal(J, axis1=-2, axis2=-1), t.diagonal_derivatives(z), atol=1e-14)
        x, ld = knothe_rosenblatt_apply(t, z)
        np.testing.assert_allclose(ld, logdet_lu(J), atol=1e-12)

    def test_non_monotone_detected(self):
        t = TriangularMap([TriangularComponent(lambda zj, prev: -zj, lambda xj, prev: -xj)])
        with pytest.raises(NonMonotoneError):
            t.log_abs_det_forward(np.ones((1, 1)))


class TestMixturesAndClusters:
    def test_affine_flow_of_gmm_is_gmm(self):
        gmm = GaussianMixture([0.4, 0.6], [[0.0, 1.0], [2.0, -1.0]], [[1.0, 0.5], [0.3, 0.8]])
        A, b = np.array([[2.0, 0.5], [0.0, 1.5]]), np.array([1.0, -2.0])
        flow = Affine(A, b)
        x = make_rng(14).standard_normal((30, 2)) * 3
        expected = np.log(
            sum(
                w * stats.multivariate_normal(A @ m + b, A @ np.diag(s**2) @ A.T).pdf(x)
                for w, m, s in zip(gmm.weights, gmm.means, gmm.stds)
            )
        )
        np.testing.assert_allclose(cov_gmm_flow(flow, gmm, x).value, expected, atol=1e-11)

    def test_vq_flow_donut(self):
        model = zoo.donut_vq_flow()
        x = DONUT.sample(200, make_rng(15))
        k = model.assign(x)
        np.testing.assert_array_equal(k, (x[:, 1] < 0).astype(int))
        np.testing.assert_allclose(cov_vq_flow(model, StandardNormal(2), x).value, DONUT.log_density_value, atol=1e-9)

    def test_vq_tie_goes_to_lowest_index(self):
        m = VqFlowModel([[0.0, 1.0], [0.0, -1.0]], [0.5, 0.5], [Affine(np.eye(2)), Affine(np.eye(2))])
        assert m.assign(np.array([[5.0, 0.0]]))[0] == 0

    def test_vq_priors_validated(self):
        with pytest.raises(ValueError):
            VqFlowModel([[0.0], [1.0]], [0.7, 0.7], [Affine(np.eye(1))] * 2)


class TestScalarMaps:
    @pytest.mark.parametrize(
        "m,u",
        [
            (ScalarBijection.affine(2.0, 1.0), 0.3),
            (ScalarBijection.gaussian_to_interval(-1.0, 3.0), 0.7),
            (ScalarBijection.cdf_radius(3.0, 8.0), 0.4),
        ],
    )
    def test_log_derivative(self, m, u):
        e = Elementwise([m])
        J = jacobian(e, np.array([u]))
        assert np.log(J[0, 0]) == pytest.approx(float(m.log_deriv(np.array(u))), abs=1e-12)
        assert float(np.asarray(m.inv(m.fwd(np.array(u))))) == pytest.approx(u, abs=1e-12)
