"""Bound assembly and the analytic oracles it is validated against."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from sgdbound import (
    BayesLinearRegressionObjective,
    EntropyDelta,
    EntropyLedger,
    GaussianPrior,
    QuadraticObjective,
    StepJacobianSpec,
    exact_logdet_step,
    analytic_evidence,
    analytic_pushforward_entropy,
    bound_at,
    energy_estimate,
)
from sgdbound import BatchSelector

from conftest import random_symmetric


class TestEnergyEstimate:
    def test_prior_only_with_empty_dataset(self):
        obj = BayesLinearRegressionObjective(np.zeros((0, 2)), np.zeros(0), 1.0)
        prior = GaussianPrior(1.0)
        assert energy_estimate(np.zeros(2), obj, prior) == pytest.approx(
            -math.log(2 * math.pi)
        )

    def test_quadratic_gaussian_at_posterior_mean(self, rng):
        # direct dense evaluation of log prior + log likelihood
        a = random_symmetric(rng, 3, 0.5, 0.1)
        a = a @ a.T + 0.5 * np.eye(3)
        mu = rng.standard_normal(3)
        obj = QuadraticObjective(a, mu)
        prior = GaussianPrior(1.3)
        posterior_mean = np.linalg.solve(
            a + np.eye(3) / prior.sigma**2, a @ mu
        )
        direct = (
            -0.5 * 3 * math.log(2 * math.pi * prior.sigma**2)
            - posterior_mean @ posterior_mean / (2 * prior.sigma**2)
            - 0.5 * (posterior_mean - mu) @ a @ (posterior_mean - mu)
        )
        assert energy_estimate(posterior_mean, obj, prior) == pytest.approx(
            direct, rel=1e-12
        )

    def test_full_batch_equals_mean_of_disjoint_minibatches(self, small_blr):
        obj = small_blr
        prior = GaussianPrior(1.0)
        theta = np.full(obj.dim, 0.2)
        n, m = obj.n_data, 5
        batches = [
            BatchSelector(np.arange(i, i + m), n / m, i // m)
            for i in range(0, n, m)
        ]
        pieces = [energy_estimate(theta, obj, prior, b) for b in batches]
        assert np.mean(pieces) == pytest.approx(
            energy_estimate(theta, obj, prior), rel=1e-12
        )

    def test_nll_shortcut_matches(self, small_blr):
        prior = GaussianPrior(0.8)
        theta = np.full(small_blr.dim, -0.1)
        nll = small_blr.value(theta)
        assert energy_estimate(theta, small_blr, prior, nll=nll) == energy_estimate(
            theta, small_blr, prior
        )


class TestBoundAt:
    def test_iteration_zero(self):
        ledger = EntropyLedger(2.5)
        report = bound_at(0, ledger, energy=-1.0)
        assert report.bound == 1.5
        assert report.entropy == 2.5

    def test_all_zero_deltas(self):
        ledger = EntropyLedger(1.0)
        for _ in range(5):
            ledger.append(EntropyDelta(0.0, "exact"))
        for t in range(6):
            assert bound_at(t, ledger, -2.0).bound == -1.0

    def test_bound_is_sum(self):
        ledger = EntropyLedger(0.5)
        ledger.append(EntropyDelta(-0.25, "exact"))
        report = bound_at(1, ledger, 3.0)
        assert report.bound == report.energy + report.entropy

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            bound_at(1, EntropyLedger(0.0), 0.0)

    def test_bits_conversion(self):
        report = bound_at(0, EntropyLedger(0.0), math.log(2))
        assert report.bound_bits == pytest.approx(1.0)


class TestAnalyticEvidence:
    def test_empty_dataset(self):
        obj = BayesLinearRegressionObjective(np.zeros((0, 3)), np.zeros(0), 1.0)
        assert analytic_evidence(obj, GaussianPrior(1.0)) == 0.0

    def test_one_point_by_hand(self):
        # y ~ N(0, x^2 + 1) when all variances are 1
        x, y = 0.7, 1.3
        obj = BayesLinearRegressionObjective(np.array([[x]]), np.array([y]), 1.0)
        var = x * x + 1.0
        want = -0.5 * (math.log(2 * math.pi * var) + y * y / var)
        assert analytic_evidence(obj, GaussianPrior(1.0)) == pytest.approx(
            want, rel=1e-12
        )

    def test_blr_matches_importance_sampling(self, rng):
        x = rng.standard_normal((5, 2))
        y = x @ np.array([0.6, -0.9]) + 0.4 * rng.standard_normal(5)
        sigma = 0.5
        obj = BayesLinearRegressionObjective(x, y, sigma)
        prior = GaussianPrior(1.0)
        closed = analytic_evidence(obj, prior)

        samples = prior.sigma * rng.standard_normal((1_000_000, 2))
        resid = samples @ x.T - y
        log_lik = -0.5 * (resid**2).sum(axis=1) / sigma**2 - 5 * 0.5 * math.log(
            2 * math.pi * sigma**2
        )
        m = log_lik.max()
        w = np.exp(log_lik - m)
        mc = m + math.log(w.mean())
        # 3 significant figures
        assert abs(mc - closed) < 1e-3 * abs(closed)

    def test_quadratic_matches_quadrature(self):
        obj = QuadraticObjective(np.array([[2.0]]), np.array([0.6]))
        prior = GaussianPrior(0.9)
        closed = analytic_evidence(obj, prior)

        def integrand(t):
            lik = math.exp(-0.5 * 2.0 * (t - 0.6) ** 2)
            pr = math.exp(-0.5 * t * t / 0.81) / math.sqrt(2 * math.pi * 0.81)
            return lik * pr

        numeric, _ = quad(integrand, -15, 15)
        assert closed == pytest.approx(math.log(numeric), abs=1e-9)

    def test_quadratic_2d_matches_monte_carlo(self, rng):
        a = np.array([[1.5, 0.4], [0.4, 0.9]])
        obj = QuadraticObjective(a, np.array([0.3, -0.5]))
        prior = GaussianPrior(1.2)
        closed = analytic_evidence(obj, prior)
        samples = prior.sigma * rng.standard_normal((1_000_000, 2))
        d = samples - obj.center
        log_lik = -0.5 * np.einsum("ni,ij,nj->n", d, a, d)
        m = log_lik.max()
        w = np.exp(log_lik - m)
        mc = m + math.log(w.mean())
        se = w.std(ddof=1) / (w.mean() * math.sqrt(len(w)))
        assert abs(mc - closed) < 3 * se + 1e-4

    def test_unsupported_kind(self, mixture_2d):
        with pytest.raises(ValueError):
            analytic_evidence(mixture_2d, GaussianPrior(1.0))


class TestPushforwardEntropy:
    def test_time_zero_is_initial_entropy(self, rng):
        a = random_symmetric(rng, 4, 0.4, 0.1)
        got = analytic_pushforward_entropy(a, None, 0.7, 0.1, 0)
        want = 0.5 * 4 * (1 + math.log(2 * math.pi)) + 4 * math.log(0.7)
        assert got == pytest.approx(want, rel=1e-12)

    def test_one_step_diagonal(self):
        a = np.diag([1.0, 2.0])
        s0 = analytic_pushforward_entropy(a, None, 1.0, 0.1, 0)
        s1 = analytic_pushforward_entropy(a, None, 1.0, 0.1, 1)
        assert s1 - s0 == pytest.approx(math.log(0.9 * 0.8), rel=1e-12)

    def test_zero_step_size_constant(self, rng):
        a = random_symmetric(rng, 3)
        s0 = analytic_pushforward_entropy(a, None, 1.0, 0.0, 0)
        for t in (1, 10, 500):
            assert analytic_pushforward_entropy(a, None, 1.0, 0.0, t) == s0

    def test_telescopes_with_exact_logdet(self, rng):
        a = random_symmetric(rng, 5, 0.5, 0.1)
        delta = exact_logdet_step(a, StepJacobianSpec(0.1)).value
        for t in range(0, 1001, 41):
            gap = analytic_pushforward_entropy(
                a, None, 1.0, 0.1, t + 1
            ) - analytic_pushforward_entropy(a, None, 1.0, 0.1, t)
            assert abs(gap - delta) < 1e-8
