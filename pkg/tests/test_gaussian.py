import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_spd
from vanopt.errors import DegenerateVariance, DimensionMismatch, FactorizationFailure
from vanopt.gaussian import (
    GaussianState,
    NaturalParams,
    from_mean_params,
    from_natural_params,
    kl_divergence,
    reparameterize,
    sample,
    to_mean_params,
    to_natural_params,
)


def random_state(seed, d):
    rng = np.random.default_rng(seed)
    return GaussianState.full(rng.standard_normal(d), random_spd(rng, d))


class TestGaussianState:
    def test_full_and_diagonal_views(self):
        g = GaussianState.diagonal([1.0, 2.0], [4.0, 0.25])
        assert g.is_diagonal
        np.testing.assert_array_equal(g.cov_matrix, np.diag([4.0, 0.25]))
        np.testing.assert_array_equal(g.precision, [0.25, 4.0])
        np.testing.assert_array_equal(g.chol, [2.0, 0.5])
        assert g.trace_cov() == 4.25

    def test_arrays_are_read_only(self):
        g = GaussianState.isotropic([0.0, 0.0])
        with pytest.raises(ValueError):
            g.mean[0] = 1.0

    def test_rejects_asymmetric_cov(self):
        with pytest.raises(ValueError):
            GaussianState.full([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])

    def test_rejects_indefinite_cov(self):
        with pytest.raises(FactorizationFailure):
            GaussianState.full([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_zero_variance_is_degenerate(self):
        with pytest.raises(FactorizationFailure):
            GaussianState.full([5.0], [[0.0]])
        with pytest.raises(DegenerateVariance):
            GaussianState.diagonal([5.0], [0.0])

    def test_dimension_checks(self):
        with pytest.raises(DimensionMismatch):
            GaussianState.full([0.0, 0.0], np.eye(3))
        with pytest.raises(DimensionMismatch):
            GaussianState.diagonal([0.0], [1.0, 1.0])

    def test_from_precision_keeps_precision(self):
        rng = np.random.default_rng(0)
        P = random_spd(rng, 3)
        P = 0.5 * (P + P.T)
        g = GaussianState.from_precision(np.zeros(3), P)
        np.testing.assert_array_equal(g.precision, P)
        np.testing.assert_allclose(g.cov @ P, np.eye(3), atol=1e-12)

    def test_from_precision_vector_applies_variance_floor(self):
        g = GaussianState.from_precision([0.0], [1e20])
        assert g.var[0] == 1e-12

    def test_entropy_matches_formula(self):
        g = random_state(3, 3)
        expected = 0.5 * np.log(np.linalg.det(2 * np.pi * np.e * g.cov))
        assert g.entropy() == pytest.approx(expected, rel=1e-12)

    def test_logpdf_matches_scipy(self):
        from scipy import stats

        g = random_state(4, 3)
        x = np.random.default_rng(1).standard_normal((5, 3))
        np.testing.assert_allclose(g.logpdf(x), stats.multivariate_normal(g.mean, g.cov).logpdf(x), rtol=1e-12)


class TestMeanParams:
    def test_zero_mean(self):
        m = to_mean_params(GaussianState.full([0.0], [[1.0]]))
        np.testing.assert_array_equal(m.m1, [0.0])
        np.testing.assert_array_equal(m.M2, [[1.0]])

    def test_scalar(self):
        m = to_mean_params(GaussianState.full([1.0], [[2.0]]))
        np.testing.assert_array_equal(m.m1, [1.0])
        np.testing.assert_array_equal(m.M2, [[3.0]])

    @pytest.mark.parametrize("d", range(1, 9))
    def test_round_trip(self, d):
        for seed in range(5):
            g = random_state(seed, d)
            back = from_mean_params(to_mean_params(g))
            np.testing.assert_allclose(back.mean, g.mean, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(back.cov, g.cov, rtol=1e-12, atol=1e-12 * np.abs(g.mean).max() ** 2)


class TestNaturalParams:
    def test_identity_cov(self):
        n = to_natural_params(GaussianState.full([0.0], [[1.0]]))
        np.testing.assert_array_equal(n.lam1, [0.0])
        np.testing.assert_array_equal(n.Lam2, [[-0.5]])

    def test_scalar(self):
        n = to_natural_params(GaussianState.full([2.0], [[4.0]]))
        np.testing.assert_allclose(n.lam1, [0.5])
        np.testing.assert_allclose(n.Lam2, [[-0.125]])

    def test_round_trip_d4(self):
        for seed in range(10):
            g = random_state(seed, 4)
            back = from_natural_params(to_natural_params(g))
            np.testing.assert_allclose(back.mean, g.mean, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(back.cov, g.cov, rtol=1e-10, atol=1e-12)

    def test_lam2_negative_definite(self):
        for seed in range(20):
            L = to_natural_params(random_state(seed, 5)).Lam2
            np.testing.assert_array_equal(L, L.T)
            assert np.max(np.linalg.eigvalsh(L)) < 0

    def test_singular_precision_fails(self):
        with pytest.raises(FactorizationFailure):
            from_natural_params(NaturalParams(np.zeros(2), np.zeros((2, 2))))

    def test_tiny_pivot_fails(self):
        with pytest.raises(FactorizationFailure):
            from_natural_params(NaturalParams(np.zeros(1), np.array([[-1e-305]])))


class TestKL:
    def test_identical_is_zero(self):
        g = random_state(0, 3)
        assert kl_divergence(g, g) == 0.0

    def test_unit_variance_shift(self):
        a = GaussianState.full([0.0], [[1.0]])
        b = GaussianState.full([1.0], [[1.0]])
        assert kl_divergence(a, b) == pytest.approx(0.5, abs=1e-15)

    def test_diagonal_matches_full(self):
        a = GaussianState.diagonal([0.3, -1.0], [0.5, 2.0])
        b = GaussianState.diagonal([1.0, 0.0], [1.5, 0.7])
        assert kl_divergence(a, b) == pytest.approx(kl_divergence(a.to_full(), b.to_full()), rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            kl_divergence(GaussianState.isotropic([0.0]), GaussianState.isotropic([0.0, 0.0]))

    def test_matches_monte_carlo(self):
        q, r = random_state(1, 3), random_state(2, 3)
        theta, _ = sample(q, 7, 10**6)
        terms = q.logpdf(theta) - r.logpdf(theta)
        se = terms.std() / np.sqrt(terms.size)
        assert abs(kl_divergence(q, r) - terms.mean()) < 3 * se

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 6))
    def test_nonnegative(self, seed, d):
        assert kl_divergence(random_state(seed, d), random_state(seed + 1, d)) >= 0.0


class TestSampling:
    def test_mean_of_draws(self):
        for sigma in (0.1, 1.0, 30.0):
            g = GaussianState.full([2.0], [[sigma**2]])
            theta, _ = sample(g, 0, 10**5)
            assert abs(theta.mean() - 2.0) < 4 * sigma / np.sqrt(10**5)

    def test_deterministic(self):
        g = random_state(0, 3)
        a, ea = sample(g, 42, 100)
        b, eb = sample(g, 42, 100)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(ea, eb)

    def test_noise_is_retained(self):
        g = random_state(5, 3)
        theta, eps = sample(g, 1, 10)
        np.testing.assert_array_equal(theta, reparameterize(g, eps))
        np.testing.assert_allclose(theta, g.mean + eps @ np.linalg.cholesky(g.cov).T, rtol=1e-13)

    def test_diagonal_reparameterization(self):
        g = GaussianState.diagonal([1.0, -1.0], [4.0, 9.0])
        theta, eps = sample(g, 3, 5)
        np.testing.assert_allclose(theta, g.mean + eps * [2.0, 3.0])

    def test_count_must_be_positive(self):
        with pytest.raises(ValueError):
            sample(GaussianState.isotropic([0.0]), 0, 0)
