"""Split flows: histograms, fiber conditionals, hierarchical and disentangled decompositions."""

import numpy as np
import pytest
from scipy import special

from covkit import zoo
from covkit.analytic import DONUT, AnisotropicGaussian
from covkit.bijective import Affine, ModelDegeneracyError, Orthogonal, coupling_stack, cov_bijective
from covkit.core.rng import make_rng
from covkit.distributions import DiagonalGaussian, StandardNormal
from covkit.injective import FiniteCodebook, LinearBottleneck
from covkit.kernels import IndependentKernel
from covkit.split import (
    CurveFiber,
    GibbsFiberConditional,
    OrthogonalityError,
    PiecewiseConstantModel,
    core_dims,
    cov_disentangled,
    cov_hierarchical,
    cov_linear_split,
    cov_piecewise_constant,
    cov_split,
    cov_split_nf,
    gibbs_fiber_conditional,
    noise_stability,
    pointwise_mi,
    radial_fiber,
    row_norm_ranking,
    validate_tree,
)
from covkit.core import dual as dm

LOG_DONUT = -5.152063071081871  # ln(1/(55π))


class TestPiecewiseConstant:
    def test_one_dimensional(self):
        m = PiecewiseConstantModel.from_histogram([[0.0, 1.0, 3.0]], [0.25, 0.75])
        v = cov_piecewise_constant(m, np.array([[0.5], [2.0], [3.0], [-0.1]])).value
        np.testing.assert_allclose(v[:2], [np.log(0.25), np.log(0.375)], atol=1e-15)
        assert np.all(v[2:] == -np.inf)

    def test_two_dimensional(self):
        m = PiecewiseConstantModel.from_histogram([[0.0, 1.0], [0.0, 0.5, 2.0]], [0.4, 0.6])
        v = cov_piecewise_constant(m, np.array([[0.5, 0.2], [0.5, 1.0]])).value
        np.testing.assert_allclose(v, [np.log(0.8), np.log(0.4)], atol=1e-15)

    def test_empty_bin_is_minus_inf(self):
        m = PiecewiseConstantModel.from_histogram([[0.0, 1.0, 2.0]], [1.0, 0.0])
        assert cov_piecewise_constant(m, np.array([[1.5]])).value[0] == -np.inf

    def test_validation(self):
        with pytest.raises(ValueError):
            PiecewiseConstantModel.from_histogram([[0.0, 0.0, 1.0]], [0.5, 0.5])
        with pytest.raises(ValueError):
            PiecewiseConstantModel.from_histogram([[0.0, 1.0]], [0.9])

    def test_voronoi_facets(self):
        book = FiniteCodebook([[0.0], [1.0]], [0.5, 0.5])
        m = PiecewiseConstantModel.from_codebook(book, [-1.0], [3.0], 200_000, make_rng(0))
        v = cov_piecewise_constant(m, np.array([[0.0], [2.0]])).value
        np.testing.assert_allclose(v, [np.log(0.5 / 1.5), np.log(0.5 / 2.5)], atol=0.01)


class TestFiberModels:
    def test_linear_split_is_the_gaussian(self):
        lb = LinearBottleneck([[1.0], [0.0]])
        nul = IndependentKernel(DiagonalGaussian([0.0], [0.5]), 1)
        x = AnisotropicGaussian().sample(20, make_rng(1))
        v = cov_linear_split(lb, StandardNormal(1), nul, x).value
        np.testing.assert_allclose(v, AnisotropicGaussian().log_prob(x), atol=1e-13)
        np.testing.assert_allclose(cov_split(zoo.gauss_split(), x).value, v, atol=1e-13)

    def test_donut_split(self):
        x = np.array([[5.0, 0.0], [-3.5, 2.0], [1.0, 0.0], [9.0, 0.0]])
        v = cov_split(zoo.donut_split(DONUT), x).value
        np.testing.assert_allclose(v[:2], LOG_DONUT, atol=1e-13)
        assert np.all(v[2:] == -np.inf)

    def test_split_nf(self):
        x = DONUT.sample(50, make_rng(2))
        np.testing.assert_allclose(cov_split_nf(zoo.donut_split_nf(DONUT), x).value, LOG_DONUT, atol=1e-12)
        assert cov_split_nf(zoo.donut_split_nf(DONUT), np.array([[0.5, 0.0]])).value[0] == -np.inf

    def test_split_sampler_stays_on_support(self):
        model = zoo.donut_split(DONUT)
        x, z = model.sample(1000, lambda n, rng: rng.uniform(0, 2 * np.pi, (n, 1)), make_rng(3))
        assert np.all(DONUT.inside(x))
        np.testing.assert_allclose(np.arctan2(x[:, 1], x[:, 0]) % (2 * np.pi), z[:, 0], atol=1e-12)


class TestHierarchical:
    def test_telescopes_for_every_tree(self):
        flow = coupling_stack(make_rng(4), 3, 3)
        x = np.asarray(flow.forward(make_rng(5).standard_normal((8, 3))))
        ref = cov_bijective(flow, StandardNormal(3), x).value
        for tree in [((0, 1), 2), (0, (1, 2)), ((2, 0), 1)]:
            np.testing.assert_allclose(cov_hierarchical(tree, flow, StandardNormal(3), x).value, ref, atol=1e-10)

    def test_shear_mutual_information(self):
        # columns (1,1) and (0,1): leaf terms lose ½ log 2, the root recovers it
        flow = Affine(np.array([[1.0, 0.0], [1.0, 1.0]]))
        x = np.array([[0.3, -0.4]])
        assert pointwise_mi((0, 1), flow, StandardNormal(2), x)[0] == pytest.approx(0.5 * np.log(2), abs=1e-13)
        assert pointwise_mi((0, 1), Affine(np.diag([2.0, 0.5])), StandardNormal(2), x)[0] == pytest.approx(0, abs=1e-13)

    def test_tree_validation(self):
        with pytest.raises(ValueError):
            validate_tree((0, (1, 1)), 3)
        with pytest.raises(ValueError):
            validate_tree((0, 1, 2), 3)

    def test_degenerate_column(self):
        with pytest.raises(ModelDegeneracyError):
            cov_hierarchical((0, 1), _ZeroColumn(), StandardNormal(2), np.zeros((1, 2)))


class _ZeroColumn(Affine):
    """Decoder that ignores its second code; the inverse is a fixed left choice."""

    def __init__(self):
        super().__init__(np.eye(2))

    def forward(self, z):
        return dm.stack([z[..., 0], 0.0 * z[..., 1]])


class TestDisentangled:
    flow = Affine(Orthogonal.rotation_2d(0.3).W @ np.diag([2.0, 0.25]))

    def test_matches_bijective_and_splits(self):
        x = make_rng(6).standard_normal((10, 2))
        rep = cov_disentangled(self.flow, StandardNormal(2), x, core_dim=1)
        assert set(rep.terms) == {"core", "detail"}
        np.testing.assert_allclose(rep.value, cov_bijective(self.flow, StandardNormal(2), x).value, atol=1e-12)

    def test_rejects_oblique_rows(self):
        with pytest.raises(OrthogonalityError):
            cov_disentangled(Affine(np.array([[1.0, 0.0], [1.0, 1.0]])), StandardNormal(2), np.zeros((1, 2)))

    def test_row_norms_rank_dimensions(self):
        flow = Affine(np.diag([1.0, 0.1, 3.0]))
        x = make_rng(7).standard_normal((5, 3))
        m, order = row_norm_ranking(flow, x)
        np.testing.assert_allclose(m, [1.0, 10.0, 1 / 3], rtol=1e-13)
        np.testing.assert_array_equal(order, [1, 0, 2])
        np.testing.assert_array_equal(core_dims(flow, x, 0.5), [0, 1])
        for v in noise_stability(flow, x, rng=make_rng(8)).values():
            np.testing.assert_allclose(v, m, rtol=1e-13)


class TestGibbs:
    def test_normalizer_closed_form(self):
        T = 0.7
        fib = radial_fiber(0.0, 3.0, 8.0)
        g = GibbsFiberConditional(T)
        B = np.sqrt(np.pi * T) / 2 * (special.erf(2 / np.sqrt(T)) + special.erf(3 / np.sqrt(T)))
        x = np.array([[4.0, 0.0], [6.5, 0.0]])
        v = gibbs_fiber_conditional(g, x, np.array([5.0, 0.0]), fib).value
        np.testing.assert_allclose(v, -(x[:, 0] - 5) ** 2 / T - np.log(B), atol=1e-11)

    def test_off_fiber(self):
        g = GibbsFiberConditional(1.0)
        v = gibbs_fiber_conditional(g, np.array([[4.0, 0.1], [9.0, 0.0]]), np.array([5.0, 0.0]), radial_fiber(0.0, 3.0, 8.0)).value
        assert np.all(v == -np.inf)

    def test_hot_limit_is_uniform(self):
        seg = CurveFiber(lambda u: dm.stack([u, 0.0 * u]), 0.0, 1.0, locate=lambda x: np.asarray(x)[..., 0])
        g = GibbsFiberConditional(1e8)
        x = np.array([[0.0, 0.0], [0.2, 0.0], [1.0, 0.0]])
        v = gibbs_fiber_conditional(g, x, np.array([0.5, 0.0]), seg).value
        np.testing.assert_allclose(v, 0.0, atol=1e-6)

    def test_numeric_arc_speed(self):
        arc = CurveFiber(lambda u: dm.stack([2 * dm.cos(u), 2 * dm.sin(u)]), 0.0, 1.0)
        np.testing.assert_allclose(arc.arc_speed(np.array([0.1, 0.7])), 2.0, rtol=1e-14)

    def test_temperature_positive(self):
        with pytest.raises(ValueError):
            GibbsFiberConditional(0.0)
