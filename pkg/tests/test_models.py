"""Objective surface: values, gradients, Hessian-vector products.

Finite differences serve as the independent oracle for every analytic
derivative; the analytic paths never reuse them.
"""

import math

import numpy as np
import pytest

from sgdbound import (
    BatchSelector,
    BayesLinearRegressionObjective,
    DimensionMismatchError,
    GaussianPrior,
    MLPClassificationObjective,
    MLPRegressionObjective,
    QuadraticObjective,
    full_batch,
    isotropic_gaussian_entropy,
)

from conftest import random_symmetric


def directional_fd(f, theta, direction, eps=1e-5):
    return (f(theta + eps * direction) - f(theta - eps * direction)) / (2 * eps)


class TestQuadratic:
    def test_value_at_minimum_is_zero(self, rng):
        a = random_symmetric(rng, 4)
        a = a @ a.T + np.eye(4)
        mu = rng.standard_normal(4)
        obj = QuadraticObjective(a, mu)
        assert obj.value(mu) == 0.0

    def test_value_identity_matrix(self):
        obj = QuadraticObjective(np.eye(2))
        assert obj.value(np.array([3.0, 4.0])) == 12.5

    def test_gradient_identity_matrix(self):
        obj = QuadraticObjective(np.eye(2))
        np.testing.assert_array_equal(
            obj.gradient(np.array([3.0, 4.0])), np.array([3.0, 4.0])
        )

    def test_hvp_is_constant_matrix_product(self, rng):
        a = random_symmetric(rng, 5)
        obj = QuadraticObjective(a)
        v = rng.standard_normal(5)
        for _ in range(3):
            theta = rng.standard_normal(5)
            np.testing.assert_allclose(
                obj.hessian_vector_product(theta, v), a @ v, rtol=0, atol=0
            )

    def test_hvp_of_zero_vector_is_zero(self, rng):
        obj = QuadraticObjective(random_symmetric(rng, 4))
        np.testing.assert_array_equal(
            obj.hessian_vector_product(rng.standard_normal(4), np.zeros(4)),
            np.zeros(4),
        )

    def test_dense_hessian_returns_matrix_exactly(self, rng):
        a = random_symmetric(rng, 6)
        obj = QuadraticObjective(a)
        np.testing.assert_array_equal(obj.dense_hessian(rng.standard_normal(6)), a)

    def test_asymmetric_matrix_rejected(self):
        with pytest.raises(ValueError):
            QuadraticObjective(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_dimension_mismatch(self):
        obj = QuadraticObjective(np.eye(3))
        with pytest.raises(DimensionMismatchError):
            obj.value(np.zeros(2))
        with pytest.raises(DimensionMismatchError):
            obj.hessian_vector_product(np.zeros(3), np.zeros(4))


class TestBayesLinearRegression:
    def test_value_matches_dense_gaussian_nll(self, rng):
        # independent dense evaluation of the Gaussian NLL at w = 0
        x = rng.standard_normal((5, 2))
        y = rng.standard_normal(5)
        sigma = 0.7
        obj = BayesLinearRegressionObjective(x, y, sigma)
        expected = 0.5 * float(y @ y) / sigma**2 + 5 * 0.5 * math.log(
            2 * math.pi * sigma**2
        )
        assert obj.value(np.zeros(2)) == pytest.approx(expected, rel=1e-12)

    def test_dense_hessian_is_scaled_gram(self, small_blr):
        h = small_blr.dense_hessian(np.zeros(small_blr.dim))
        gram = small_blr.features.T @ small_blr.features / small_blr.noise_sigma**2
        np.testing.assert_allclose(h, gram, rtol=1e-12)

    def test_empty_dataset_value_is_zero(self):
        obj = BayesLinearRegressionObjective(
            np.zeros((0, 2)), np.zeros(0), 1.0
        )
        assert obj.value(np.zeros(2)) == 0.0

    def test_pointwise_sums_to_negative_value(self, small_blr, rng):
        theta = rng.standard_normal(small_blr.dim)
        pieces = small_blr.pointwise_log_likelihood(
            theta, small_blr.features, small_blr.targets
        )
        assert pieces.sum() == pytest.approx(-small_blr.value(theta), rel=1e-12)


class TestMLP:
    def test_zero_net_zero_data_has_zero_gradient(self):
        x = np.zeros((4, 3))
        y = np.zeros((4, 1))
        obj = MLPRegressionObjective(x, y, 5, 1.0)
        np.testing.assert_array_equal(obj.gradient(np.zeros(obj.dim)), 0.0)

    @pytest.mark.parametrize("activation", ["tanh", "sigmoid"])
    def test_regression_hvp_matches_gradient_differences(self, rng, activation):
        x = rng.standard_normal((10, 3))
        y = rng.standard_normal((10, 2))
        obj = MLPRegressionObjective(x, y, 4, 0.5, activation)
        assert obj.dim <= 50
        for _ in range(5):
            theta = 0.5 * rng.standard_normal(obj.dim)
            v = rng.standard_normal(obj.dim)
            v /= np.linalg.norm(v)
            fd = directional_fd(lambda t: obj.gradient(t), theta, v)
            hv = obj.hessian_vector_product(theta, v)
            assert np.linalg.norm(fd - hv) / np.linalg.norm(hv) < 1e-4

    @pytest.mark.parametrize("activation", ["tanh", "sigmoid"])
    def test_classification_hvp_matches_gradient_differences(self, rng, activation):
        x = rng.standard_normal((15, 3))
        labels = rng.integers(0, 3, size=15)
        obj = MLPClassificationObjective(x, labels, 4, 3, activation)
        for _ in range(5):
            theta = 0.5 * rng.standard_normal(obj.dim)
            v = rng.standard_normal(obj.dim)
            v /= np.linalg.norm(v)
            fd = directional_fd(lambda t: obj.gradient(t), theta, v)
            hv = obj.hessian_vector_product(theta, v)
            assert np.linalg.norm(fd - hv) / np.linalg.norm(hv) < 1e-4

    def test_hvp_linear_in_direction(self, small_mlp_regression, rng):
        obj = small_mlp_regression
        theta = rng.standard_normal(obj.dim)
        u = rng.standard_normal(obj.dim)
        v = rng.standard_normal(obj.dim)
        combined = obj.hessian_vector_product(theta, 2.0 * u - 3.0 * v)
        parts = 2.0 * obj.hessian_vector_product(
            theta, u
        ) - 3.0 * obj.hessian_vector_product(theta, v)
        np.testing.assert_allclose(combined, parts, rtol=1e-10, atol=1e-12)

    def test_dense_hessian_symmetric(self, small_mlp_regression, rng):
        obj = small_mlp_regression
        theta = 0.5 * rng.standard_normal(obj.dim)
        h = obj.dense_hessian(theta)
        assert np.abs(h - h.T).max() < 1e-8

    def test_classification_value_is_cross_entropy(self, rng):
        x = rng.standard_normal((8, 2))
        labels = rng.integers(0, 4, size=8)
        obj = MLPClassificationObjective(x, labels, 3, 4)
        # zero parameters give uniform class probabilities
        assert obj.value(np.zeros(obj.dim)) == pytest.approx(8 * math.log(4))

    def test_classification_pointwise_sums_to_negative_value(self, rng):
        x = rng.standard_normal((9, 2))
        labels = rng.integers(0, 3, size=9)
        obj = MLPClassificationObjective(x, labels, 3, 3)
        theta = rng.standard_normal(obj.dim)
        total = obj.pointwise_log_likelihood(theta, x, labels).sum()
        assert total == pytest.approx(-obj.value(theta), rel=1e-12)

    def test_dense_hessian_cap(self, rng):
        x = rng.standard_normal((4, 3))
        obj = MLPRegressionObjective(x, np.zeros(4), 5, 1.0)
        with pytest.raises(ValueError):
            obj.dense_hessian(np.zeros(obj.dim), cap=obj.dim - 1)


class TestSharedInvariants:
    """Gradient/value and HVP/gradient consistency across all objectives."""

    def test_gradient_matches_value_finite_differences(
        self, rng, small_blr, small_mlp_regression, small_mlp_classification,
        mixture_2d,
    ):
        quad = QuadraticObjective(random_symmetric(rng, 5))
        pair_count = 0
        for obj in (quad, small_blr, small_mlp_regression,
                    small_mlp_classification, mixture_2d):
            for _ in range(20):
                theta = 0.5 * rng.standard_normal(obj.dim)
                d = rng.standard_normal(obj.dim)
                d /= np.linalg.norm(d)
                fd = directional_fd(lambda t: obj.value(t), theta, d)
                proj = obj.gradient(theta) @ d
                assert abs(fd - proj) / max(abs(proj), 1e-8) < 1e-5
                pair_count += 1
        assert pair_count == 100

    def test_hvp_symmetry(self, rng, small_mlp_regression,
                          small_mlp_classification, small_blr):
        for obj in (small_mlp_regression, small_mlp_classification, small_blr):
            theta = 0.5 * rng.standard_normal(obj.dim)
            scale = np.linalg.norm(
                obj.hessian_vector_product(theta, np.ones(obj.dim))
            )
            for _ in range(10):
                u = rng.standard_normal(obj.dim)
                v = rng.standard_normal(obj.dim)
                left = u @ obj.hessian_vector_product(theta, v)
                right = v @ obj.hessian_vector_product(theta, u)
                bound = 1e-8 * np.linalg.norm(u) * np.linalg.norm(v) * max(scale, 1.0)
                assert abs(left - right) < bound

    def test_minibatch_gradients_average_to_full(self, small_blr):
        obj = small_blr
        n, m = obj.n_data, 5
        assert n % m == 0
        theta = np.full(obj.dim, 0.3)
        full = obj.gradient(theta)
        batches = [
            BatchSelector(np.arange(i, i + m), n / m, i // m)
            for i in range(0, n, m)
        ]
        stacked = np.mean([obj.gradient(theta, b) for b in batches], axis=0)
        np.testing.assert_allclose(stacked, full, rtol=1e-12)

    def test_minibatch_values_average_to_full(self, small_mlp_regression, rng):
        obj = small_mlp_regression
        n, m = obj.n_data, 4
        theta = 0.2 * rng.standard_normal(obj.dim)
        batches = [
            BatchSelector(np.arange(i, i + m), n / m, i // m)
            for i in range(0, n, m)
        ]
        avg = np.mean([obj.value(theta, b) for b in batches])
        assert avg == pytest.approx(obj.value(theta), rel=1e-12)

    def test_batch_indices_validated(self, small_blr):
        bad = BatchSelector(np.array([0, 99]), 10.0)
        with pytest.raises(IndexError):
            small_blr.value(np.zeros(small_blr.dim), bad)

    def test_full_batch_helper(self, small_blr):
        b = full_batch(small_blr.n_data)
        assert small_blr.value(np.zeros(3), b) == pytest.approx(
            small_blr.value(np.zeros(3)), rel=0
        )


class TestGaussianPrior:
    def test_log_density_standard_normal_origin(self):
        prior = GaussianPrior(1.0)
        assert prior.log_density(np.zeros(2)) == pytest.approx(
            -math.log(2 * math.pi)
        )

    def test_entropy_matches_formula(self):
        assert isotropic_gaussian_entropy(1, 1.0) == pytest.approx(
            1.4189385332046727
        )
        assert GaussianPrior(0.1).entropy(10) == pytest.approx(
            -8.836465597893728
        )

    def test_sample_deterministic(self):
        prior = GaussianPrior(2.0)
        a = prior.sample(np.random.default_rng(7), 5)
        b = prior.sample(np.random.default_rng(7), 5)
        np.testing.assert_array_equal(a, b)

    def test_invalid_sigma(self):
        with pytest.raises(ValueError):
            GaussianPrior(0.0)


class TestMixture2D:
    def test_gradient_matches_finite_differences(self, mixture_2d, rng):
        for _ in range(10):
            theta = 2.0 * rng.standard_normal(2)
            d = rng.standard_normal(2)
            d /= np.linalg.norm(d)
            fd = directional_fd(lambda t: mixture_2d.value(t), theta, d, eps=1e-6)
            assert abs(fd - mixture_2d.gradient(theta) @ d) < 1e-7

    def test_hvp_matches_gradient_differences(self, mixture_2d, rng):
        for _ in range(10):
            theta = 2.0 * rng.standard_normal(2)
            v = rng.standard_normal(2)
            fd = directional_fd(
                lambda t: mixture_2d.gradient(t), theta, v, eps=1e-6
            )
            hv = mixture_2d.hessian_vector_product(theta, v)
            assert np.linalg.norm(fd - hv) / max(np.linalg.norm(hv), 1e-8) < 1e-6

    def test_gradient_many_matches_loop(self, mixture_2d, rng):
        thetas = rng.standard_normal((6, 2))
        batch = mixture_2d.gradient_many(thetas)
        loop = np.stack([mixture_2d.gradient(t) for t in thetas])
        np.testing.assert_allclose(batch, loop, rtol=1e-12, atol=1e-14)
