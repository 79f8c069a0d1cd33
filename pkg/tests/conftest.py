import numpy as np
import pytest

from sgdbound import (
    BayesLinearRegressionObjective,
    GaussianMixture2DObjective,
    MLPClassificationObjective,
    MLPRegressionObjective,
    QuadraticObjective,
)


def random_symmetric(rng, dim, step_lambda_max=None, step_size=1.0):
    """Random symmetric matrix, optionally rescaled so that
    step_size * |lambda|_max equals step_lambda_max."""
    raw = rng.standard_normal((dim, dim))
    h = 0.5 * (raw + raw.T)
    if step_lambda_max is not None:
        lam = np.max(np.abs(np.linalg.eigvalsh(h)))
        h *= step_lambda_max / (step_size * lam)
    return h


def random_spd(rng, dim, step_lambda_max, step_size):
    raw = rng.standard_normal((dim, dim))
    h = raw @ raw.T + 0.1 * np.eye(dim)
    lam = np.max(np.linalg.eigvalsh(h))
    return h * (step_lambda_max / (step_size * lam))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_mlp_regression(rng):
    x = rng.standard_normal((12, 3))
    y = np.sin(x[:, 0]) + 0.1 * rng.standard_normal(12)
    return MLPRegressionObjective(x, y, 5, 0.4)


@pytest.fixture
def small_mlp_classification(rng):
    x = rng.standard_normal((30, 4))
    labels = rng.integers(0, 3, size=30)
    return MLPClassificationObjective(x, labels, 6, 3)


@pytest.fixture
def small_blr(rng):
    x = rng.standard_normal((20, 3))
    y = x @ np.array([0.8, -0.5, 0.2]) + 0.3 * rng.standard_normal(20)
    return BayesLinearRegressionObjective(x, y, 0.5)


@pytest.fixture
def mixture_2d():
    return GaussianMixture2DObjective(
        [0.55, 0.45],
        [[-1.2, -0.4], [1.0, 0.8]],
        [[[0.5, 0.15], [0.15, 0.3]], [[0.35, -0.1], [-0.1, 0.45]]],
    )


@pytest.fixture
def quadratic_2d():
    return QuadraticObjective(np.diag([1.0, 2.0]))
