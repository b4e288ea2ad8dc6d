"""Dual numbers, Jacobians, LU log-determinants, integration, RNG and reports."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from covkit.core import dual as dm
from covkit.core.integrate import IntegrationError, mc_integrate, quad_integrate_1d
from covkit.core.jacobian import DUAL, FD, DiffConfig, MapSingularityError, jacobian, relative_frobenius, value_and_jacobian
from covkit.core.linalg import RankDeficiencyError, half_logdet_gram, logdet_lu, lu_factor, pinv_left, signed_logdet_lu
from covkit.core.report import CovReport, masked_terms
from covkit.core.rng import RngStream, make_rng, rademacher


def cofactor_det(m):
    """Laplace expansion along the first row; independent of any factorization."""
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if n == 1:
        return m[0, 0]
    return sum((-1) ** j * m[0, j] * cofactor_det(np.delete(np.delete(m, 0, 0), j, 1)) for j in range(n))


class TestDualDerivatives:
    x = np.array([0.3, 1.1, 2.5])

    @pytest.mark.parametrize(
        "f,df",
        [
            (dm.sin, np.cos),
            (dm.cos, lambda v: -np.sin(v)),
            (dm.exp, np.exp),
            (dm.log, lambda v: 1 / v),
            (dm.sqrt, lambda v: 0.5 / np.sqrt(v)),
            (dm.tanh, lambda v: 1 - np.tanh(v) ** 2),
            (dm.log1p, lambda v: 1 / (1 + v)),
            (dm.expm1, np.exp),
            (dm.sigmoid, lambda v: np.exp(-v) / (1 + np.exp(-v)) ** 2),
            (dm.norm_cdf, lambda v: np.exp(-v * v / 2) / np.sqrt(2 * np.pi)),
        ],
    )
    def test_unary(self, f, df):
        d = f(dm.Dual(self.x, np.ones((3, 1))))
        np.testing.assert_allclose(d.eps[:, 0], df(self.x), rtol=1e-13)

    def test_norm_ppf_inverts_cdf(self):
        u = np.array([0.1, 0.5, 0.93])
        d = dm.norm_ppf(dm.Dual(u, np.ones((3, 1))))
        z = d.val
        np.testing.assert_allclose(d.eps[:, 0], np.sqrt(2 * np.pi) * np.exp(z * z / 2), rtol=1e-12)

    def test_arithmetic_and_power(self):
        a = dm.Dual(np.array(2.0), np.array([1.0]))
        r = (a * a + 3 / a - a ** 3 + 2 ** a) / (a - 0.5)
        f = lambda v: (v * v + 3 / v - v**3 + 2**v) / (v - 0.5)
        h = 1e-6
        assert abs(r.eps[0] - (f(2 + h) - f(2 - h)) / (2 * h)) < 1e-7
        assert r.val == pytest.approx(f(2.0))

    def test_arctan2_and_norm(self):
        J = jacobian(lambda p: dm.stack([dm.arctan2(p[..., 1], p[..., 0]), dm.norm(p)]), np.array([3.0, 4.0]))
        np.testing.assert_allclose(J, [[-4 / 25, 3 / 25], [3 / 5, 4 / 5]], rtol=1e-14)

    def test_refuses_numpy_ufuncs(self):
        with pytest.raises(TypeError):
            np.sin(dm.Dual(np.array(1.0), np.array([1.0])))

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_product_rule(self, a, b):
        x = dm.seed(np.array([a, b]))
        p = x[..., 0] * dm.sin(x[..., 1])
        np.testing.assert_allclose(p.eps, [np.sin(b), a * np.cos(b)], atol=1e-14)


class TestJacobian:
    def test_dual_matches_fd(self):
        f = lambda p: dm.stack([dm.exp(p[..., 0]) * p[..., 1], dm.sin(p[..., 0] + p[..., 1] ** 2), p[..., 0] / (1 + p[..., 1] ** 2)])
        z = make_rng(1).standard_normal((7, 2))
        Jd, Jf = jacobian(f, z, DUAL), jacobian(f, z, FD)
        assert Jd.shape == (7, 3, 2)
        assert np.max(relative_frobenius(Jd, Jf)) < 1e-8

    def test_linear_map_exact(self):
        A = make_rng(2).standard_normal((3, 4))
        J = jacobian(lambda x: dm.linear(x, A), np.ones(4))
        np.testing.assert_array_equal(J, A)

    def test_value_and_jacobian(self):
        v, J = value_and_jacobian(lambda x: x * x, np.array([1.0, 3.0]))
        np.testing.assert_array_equal(v, [1, 9])
        np.testing.assert_array_equal(J, np.diag([2.0, 6.0]))

    def test_rejects_non_finite(self):
        with pytest.raises(MapSingularityError):
            jacobian(lambda x: dm.sqrt(x), np.array([0.0]))

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            jacobian(lambda x: x, np.ones(2), DiffConfig(mode="symbolic"))


class TestLU:
    @pytest.mark.parametrize("n", [1, 2, 3, 5])
    def test_matches_cofactor_expansion(self, n):
        rng = make_rng(n)
        for _ in range(5):
            m = rng.standard_normal((n, n))
            s, ld = signed_logdet_lu(m)
            d = cofactor_det(m)
            assert s == np.sign(d)
            assert ld == pytest.approx(np.log(abs(d)), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 4), elements=st.floats(-10, 10).map(lambda v: round(v, 3))))
    def test_property_against_cofactor(self, m):
        d = cofactor_det(m)
        scale = np.max(np.abs(m))
        if scale == 0 or abs(d) < 1e-6 * scale**4:
            return
        assert logdet_lu(m) == pytest.approx(np.log(abs(d)), abs=1e-8)

    def test_batched(self):
        m = make_rng(9).standard_normal((6, 3, 3))
        np.testing.assert_allclose(logdet_lu(m), [np.log(abs(cofactor_det(a))) for a in m], atol=1e-12)

    def test_pivots_give_signed_determinant(self):
        m = make_rng(3).standard_normal((4, 4))
        LU, sign = lu_factor(m)
        assert sign * np.prod(np.diag(LU)) == pytest.approx(cofactor_det(m), rel=1e-12)

    def test_singular(self):
        m = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(RankDeficiencyError):
            logdet_lu(m)
        assert logdet_lu(m, raise_singular=False) == -np.inf

    def test_gram_and_pinv(self):
        W = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]])
        G = W.T @ W
        assert half_logdet_gram(W) == pytest.approx(0.5 * np.log(np.linalg.det(G)), abs=1e-14)
        np.testing.assert_allclose(pinv_left(W) @ W, np.eye(2), atol=1e-14)


class TestIntegration:
    def test_mc_gaussian_mass(self):
        res = mc_integrate(lambda x: np.exp(-0.5 * np.sum(x * x, -1)) / (2 * np.pi), [-8, -8], [8, 8], 200_000, make_rng(4))
        assert abs(res.estimate - 1) < 4 * res.std_error

    def test_mc_aborts_on_nan(self):
        with pytest.raises(IntegrationError):
            mc_integrate(lambda x: np.full(x.shape[0], np.nan), [0], [1], 1000, make_rng(0))

    def test_quad(self):
        assert quad_integrate_1d(lambda r: 2 * r / 55, 3, 8) == pytest.approx(1.0, abs=1e-13)

    def test_quad_warns_to_error(self):
        with pytest.raises(IntegrationError):
            quad_integrate_1d(lambda u: 1 / abs(u - 0.3), 0, 1, limit=5)


class TestRng:
    def test_reproducible(self):
        a = make_rng(5).standard_normal(4)
        b = RngStream(5).generator().standard_normal(4)
        np.testing.assert_array_equal(a, b)

    def test_children_independent(self):
        c1, c2 = RngStream(5).spawn(2)
        assert not np.array_equal(c1.random(3), c2.random(3))

    def test_rademacher_values(self):
        r = rademacher(make_rng(0), (1000,))
        assert set(np.unique(r)) == {-1.0, 1.0}


class TestReport:
    def test_sum_in_order(self):
        r = CovReport({"a": np.array([1.0, 2.0]), "b": np.array([0.5, 0.5])})
        np.testing.assert_array_equal(r.value, [1.5, 2.5])
        assert [k for k, _ in r.breakdown()] == ["a", "b"]
        np.testing.assert_array_equal(r.take(np.array([False, True])).value, [2.5])

    def test_masked_terms(self):
        t = masked_terms(np.array([True, False]), {"a": np.array([1.0, 2.0]), "b": np.array([3.0, 4.0])})
        np.testing.assert_array_equal(t["a"], [1.0, -np.inf])
        np.testing.assert_array_equal(t["b"], [3.0, 0.0])
        assert CovReport(t).value[1] == -np.inf
