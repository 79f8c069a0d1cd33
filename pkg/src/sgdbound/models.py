"""Objectives with exact gradients and Hessian-vector products.

Every objective exposes the same surface: ``value``, ``gradient`` and
``hessian_vector_product``, each taking a flat parameter vector and an
optional minibatch selector. Batch values and gradients are scaled by
N/m so minibatch quantities are unbiased estimates of the full-data
negative log-likelihood (constants included, so values are proper log
densities). Second-order information is analytic everywhere: the MLPs
use forward/backward R-operator passes, never finite differences.

Objectives are immutable after construction and safe for concurrent
read-only use; training mutates only its own parameter vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

DENSE_HESSIAN_CAP = 2000

LOG_2PI = math.log(2.0 * math.pi)


class DimensionMismatchError(ValueError):
    """Parameter or direction vector has the wrong length."""


class NonFiniteValueError(FloatingPointError):
    """Model produced NaN/Inf output, usually a sign the run diverged."""


@dataclass(frozen=True, eq=False)
class BatchSelector:
    """Rows of the bound dataset used for one stochastic step.

    ``scale`` is N/m so that scaled batch sums are unbiased estimates of
    full-data sums (exact when m divides N).
    """

    indices: np.ndarray
    scale: float
    epoch_position: int = 0

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.intp))
        if self.scale <= 0:
            raise ValueError(f"batch scale must be positive, got {self.scale}")


def full_batch(n_data: int) -> BatchSelector:
    return BatchSelector(np.arange(n_data), 1.0, 0)


def isotropic_gaussian_entropy(dim: int, sigma: float) -> float:
    """Differential entropy of N(0, sigma^2 I_dim) in nats."""
    return 0.5 * dim * (1.0 + LOG_2PI) + dim * math.log(sigma)


@dataclass(frozen=True)
class GaussianPrior:
    """Isotropic zero-mean Gaussian over the parameter vector."""

    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"prior sigma must be positive, got {self.sigma}")

    def log_density(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        d = theta.shape[0]
        return -0.5 * d * (LOG_2PI + 2.0 * math.log(self.sigma)) - float(
            theta @ theta
        ) / (2.0 * self.sigma**2)

    def entropy(self, dim: int) -> float:
        return isotropic_gaussian_entropy(dim, self.sigma)

    def sample(self, rng: np.random.Generator, dim: int) -> np.ndarray:
        return self.sigma * rng.standard_normal(dim)


class Objective:
    """Base class: a twice-differentiable scaled negative log-likelihood.

    Subclasses set ``dim``, ``n_data`` and ``kind`` and implement
    ``_value``, ``_gradient`` and ``_hvp`` over an index array (``None``
    means the full dataset). Dataset-free objectives (``n_data == 0``)
    ignore the batch argument.
    """

    dim: int
    n_data: int
    kind: str

    # -- shared plumbing ---------------------------------------------------

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise DimensionMismatchError(
                f"{self.kind}: expected parameter vector of length {self.dim}, "
                f"got shape {theta.shape}"
            )
        return theta

    def _resolve(self, batch):
        if batch is None or self.n_data == 0:
            return None, 1.0
        idx = batch.indices
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_data):
            raise IndexError(
                f"batch indices out of range for dataset of size {self.n_data}"
            )
        return idx, float(batch.scale)

    # -- public surface ----------------------------------------------------

    def value(self, theta, batch=None) -> float:
        theta = self._check_theta(theta)
        idx, scale = self._resolve(batch)
        v = float(self._value(theta, idx)) * scale
        if not math.isfinite(v):
            raise NonFiniteValueError(f"{self.kind}: non-finite objective value {v}")
        return v

    def gradient(self, theta, batch=None) -> np.ndarray:
        theta = self._check_theta(theta)
        idx, scale = self._resolve(batch)
        g = self._gradient(theta, idx) * scale
        if not np.all(np.isfinite(g)):
            raise NonFiniteValueError(f"{self.kind}: non-finite gradient")
        return g

    def _check_direction(self, vector) -> np.ndarray:
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.dim,):
            raise DimensionMismatchError(
                f"{self.kind}: direction must have length {self.dim}, "
                f"got shape {vector.shape}"
            )
        return vector

    def hessian_vector_product(self, theta, vector, batch=None) -> np.ndarray:
        return self.make_hvp(theta, batch)(vector)

    def make_hvp(self, theta, batch=None):
        """Hessian-vector-product closure at a fixed point and batch.

        Per-point state (forward activations, output deltas) is computed
        once, so repeated products at the same point cost only the two
        contraction passes. Subclasses override for the cached version.
        """
        theta = self._check_theta(theta)
        idx, scale = self._resolve(batch)
        return lambda vector: self._hvp(
            theta, self._check_direction(vector), idx
        ) * scale

    def dense_hessian(self, theta, batch=None, cap: int = DENSE_HESSIAN_CAP):
        """Assemble the Hessian column-by-column from dim HVP calls."""
        if self.dim > cap:
            raise ValueError(
                f"dense Hessian requested for dim={self.dim}, cap is {cap}"
            )
        hvp = self.make_hvp(theta, batch)
        h = np.empty((self.dim, self.dim))
        e = np.zeros(self.dim)
        for j in range(self.dim):
            e[j] = 1.0
            h[:, j] = hvp(e)
            e[j] = 0.0
        return h

    # -- hooks ---------------------------------------------------------------

    def _value(self, theta, idx) -> float:
        raise NotImplementedError

    def _gradient(self, theta, idx) -> np.ndarray:
        raise NotImplementedError

    def _hvp(self, theta, vector, idx) -> np.ndarray:
        raise NotImplementedError

    def pointwise_log_likelihood(self, theta, features, targets) -> np.ndarray:
        raise NotImplementedError(f"{self.kind}: no per-example likelihood")


class QuadraticObjective(Objective):
    """L(theta) = 0.5 (theta - center)^T A (theta - center).

    Constant Hessian A; the workhorse for exactness tests because every
    quantity (gradient flow, pushforward entropy, evidence against a
    Gaussian prior) has a closed form.
    """

    kind = "quadratic"

    def __init__(self, curvature, center=None):
        a = np.asarray(curvature, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"curvature must be square, got shape {a.shape}")
        if not np.allclose(a, a.T, atol=1e-10):
            raise ValueError("curvature matrix must be symmetric")
        self.curvature = a
        self.dim = a.shape[0]
        self.n_data = 0
        self.center = (
            np.zeros(self.dim) if center is None else np.asarray(center, dtype=float)
        )
        if self.center.shape != (self.dim,):
            raise ValueError("center must match curvature dimension")

    def _value(self, theta, idx):
        d = theta - self.center
        return 0.5 * d @ (self.curvature @ d)

    def _gradient(self, theta, idx):
        return self.curvature @ (theta - self.center)

    def _hvp(self, theta, vector, idx):
        return self.curvature @ vector

    def gradient_many(self, thetas: np.ndarray) -> np.ndarray:
        """Gradients for a stack of parameter vectors (particle clouds)."""
        return (thetas - self.center) @ self.curvature.T


class BayesLinearRegressionObjective(Objective):
    """Gaussian-noise linear regression, likelihood term only.

    nll(w) = sum_n [ (y_n - x_n.w)^2 / (2 s^2) + 0.5 log(2 pi s^2) ];
    the Hessian is the scaled Gram matrix X^T X / s^2, independent of w,
    which makes the model conjugate: posterior and evidence are exact.
    """

    kind = "bayes-linear-regression"

    def __init__(self, features, targets, noise_sigma: float):
        x = np.asarray(features, dtype=float)
        y = np.asarray(targets, dtype=float)
        if y.ndim == 2:
            if y.shape[1] != 1:
                raise ValueError("targets must be a single column")
            y = y[:, 0]
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError(
                f"incompatible shapes: features {x.shape}, targets {y.shape}"
            )
        if noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        self.features = x
        self.targets = y
        self.noise_sigma = float(noise_sigma)
        self.n_data = x.shape[0]
        self.dim = x.shape[1]

    def _rows(self, idx):
        if idx is None:
            return self.features, self.targets
        return self.features[idx], self.targets[idx]

    def _value(self, theta, idx):
        x, y = self._rows(idx)
        r = x @ theta - y
        s2 = self.noise_sigma**2
        return 0.5 * (r @ r) / s2 + 0.5 * len(y) * (LOG_2PI + math.log(s2))

    def _gradient(self, theta, idx):
        x, y = self._rows(idx)
        return x.T @ (x @ theta - y) / self.noise_sigma**2

    def _hvp(self, theta, vector, idx):
        x, _ = self._rows(idx)
        return x.T @ (x @ vector) / self.noise_sigma**2

    def pointwise_log_likelihood(self, theta, features, targets):
        theta = self._check_theta(theta)
        x = np.asarray(features, dtype=float)
        y = np.asarray(targets, dtype=float).reshape(-1)
        r = x @ theta - y
        s2 = self.noise_sigma**2
        return -0.5 * r * r / s2 - 0.5 * (LOG_2PI + math.log(s2))


def _activation_passes(name: str, preact: np.ndarray):
    """Return (act, act', act'') evaluated elementwise on the preactivation."""
    if name == "tanh":
        h = np.tanh(preact)
        dh = 1.0 - h * h
        d2h = -2.0 * h * dh
    elif name == "sigmoid":
        h = expit(preact)
        dh = h * (1.0 - h)
        d2h = dh * (1.0 - 2.0 * h)
    else:
        raise ValueError(f"unknown activation '{name}' (want tanh or sigmoid)")
    return h, dh, d2h


class _SingleHiddenLayerMLP(Objective):
    """Shared machinery for one-hidden-layer networks.

    Parameter packing order: W1 (hidden x in), b1, W2 (out x hidden), b2.
    The R-operator passes give exact Hessian-vector products at roughly
    twice the cost of a gradient.
    """

    def __init__(self, features, hidden_units: int, out_dim: int, activation: str):
        x = np.asarray(features, dtype=float)
        if x.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")
        if activation not in ("tanh", "sigmoid"):
            raise ValueError(f"unknown activation '{activation}'")
        self.features = x
        self.n_data = x.shape[0]
        self.n_features = x.shape[1]
        self.hidden_units = hidden_units
        self.out_dim = out_dim
        self.activation = activation
        f, h, o = self.n_features, hidden_units, out_dim
        self._splits = np.cumsum([h * f, h, o * h])
        self.dim = int(self._splits[-1] + o)

    def unpack(self, theta):
        f, h, o = self.n_features, self.hidden_units, self.out_dim
        w1, b1, w2, b2 = np.split(theta, self._splits)
        return w1.reshape(h, f), b1, w2.reshape(o, h), b2

    @staticmethod
    def _pack(w1, b1, w2, b2):
        return np.concatenate([w1.ravel(), b1, w2.ravel(), b2])

    def _forward(self, theta, x):
        w1, b1, w2, b2 = self.unpack(theta)
        preact = x @ w1.T + b1
        h, dh, d2h = _activation_passes(self.activation, preact)
        z = h @ w2.T + b2
        return w1, b1, w2, b2, h, dh, d2h, z

    # subclass hooks: loss terms and output-layer derivatives --------------

    def _output_loss(self, z, idx) -> float:
        raise NotImplementedError

    def _output_delta(self, z, idx) -> np.ndarray:
        """d loss / d z, per example (no batch scale)."""
        raise NotImplementedError

    def _output_delta_directional(self, z, rz, idx) -> np.ndarray:
        """Directional derivative of _output_delta along R{z} = rz."""
        raise NotImplementedError

    # shared value / gradient / hvp -----------------------------------------

    def _value(self, theta, idx):
        x = self.features if idx is None else self.features[idx]
        z = self._forward(theta, x)[-1]
        return self._output_loss(z, idx)

    def _gradient(self, theta, idx):
        x = self.features if idx is None else self.features[idx]
        _, _, w2, _, h, dh, _, z = self._forward(theta, x)
        dz = self._output_delta(z, idx)
        g_w2 = dz.T @ h
        g_b2 = dz.sum(axis=0)
        da = dh * (dz @ w2)
        g_w1 = da.T @ x
        g_b1 = da.sum(axis=0)
        return self._pack(g_w1, g_b1, g_w2, g_b2)

    def _hvp_state(self, theta, idx):
        """One forward/backward pass; returns the directional-pass closure."""
        x = self.features if idx is None else self.features[idx]
        _, _, w2, _, h, dh, d2h, z = self._forward(theta, x)
        dz = self._output_delta(z, idx)
        dhid = dz @ w2

        def apply(vector):
            v1, c1, v2, c2 = self.unpack(vector)
            # forward directional pass
            ra = x @ v1.T + c1
            rh = dh * ra
            rz = h @ v2.T + rh @ w2.T + c2
            # backward directional pass
            rdz = self._output_delta_directional(z, rz, idx)
            r_gw2 = rdz.T @ h + dz.T @ rh
            r_gb2 = rdz.sum(axis=0)
            rdhid = dz @ v2 + rdz @ w2
            rda = d2h * ra * dhid + dh * rdhid
            r_gw1 = rda.T @ x
            r_gb1 = rda.sum(axis=0)
            return self._pack(r_gw1, r_gb1, r_gw2, r_gb2)

        return apply

    def _hvp(self, theta, vector, idx):
        return self._hvp_state(theta, idx)(vector)

    def make_hvp(self, theta, batch=None):
        theta = self._check_theta(theta)
        idx, scale = self._resolve(batch)
        apply = self._hvp_state(theta, idx)
        return lambda vector: apply(self._check_direction(vector)) * scale


class MLPRegressionObjective(_SingleHiddenLayerMLP):
    """One-hidden-layer regression net with a fixed-noise Gaussian likelihood."""

    kind = "mlp-regression"

    def __init__(self, features, targets, hidden_units, noise_sigma, activation="tanh"):
        y = np.asarray(targets, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        super().__init__(features, hidden_units, y.shape[1], activation)
        if y.shape[0] != self.n_data:
            raise ValueError("targets and features row counts differ")
        if noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        self.targets = y
        self.noise_sigma = float(noise_sigma)

    def _rows_targets(self, idx):
        return self.targets if idx is None else self.targets[idx]

    def _output_loss(self, z, idx):
        r = z - self._rows_targets(idx)
        s2 = self.noise_sigma**2
        return 0.5 * np.sum(r * r) / s2 + 0.5 * r.size * (LOG_2PI + math.log(s2))

    def _output_delta(self, z, idx):
        return (z - self._rows_targets(idx)) / self.noise_sigma**2

    def _output_delta_directional(self, z, rz, idx):
        return rz / self.noise_sigma**2

    def pointwise_log_likelihood(self, theta, features, targets):
        theta = self._check_theta(theta)
        x = np.asarray(features, dtype=float)
        y = np.asarray(targets, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        z = self._forward(theta, x)[-1]
        r = z - y
        s2 = self.noise_sigma**2
        return -0.5 * np.sum(r * r, axis=1) / s2 - 0.5 * y.shape[1] * (
            LOG_2PI + math.log(s2)
        )


class MLPClassificationObjective(_SingleHiddenLayerMLP):
    """One-hidden-layer classifier with softmax cross-entropy likelihood."""

    kind = "mlp-classification"

    def __init__(self, features, labels, hidden_units, n_classes=None, activation="tanh"):
        labels = np.asarray(labels)
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("labels must be integers")
        if n_classes is None:
            n_classes = int(labels.max()) + 1 if labels.size else 2
        super().__init__(features, hidden_units, int(n_classes), activation)
        if labels.shape != (self.n_data,):
            raise ValueError("labels and features row counts differ")
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise ValueError("labels out of range")
        self.labels = labels.astype(np.intp)

    def _rows_labels(self, idx):
        return self.labels if idx is None else self.labels[idx]

    @staticmethod
    def _log_softmax(z):
        zmax = z.max(axis=1, keepdims=True)
        shifted = z - zmax
        lse = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
        return shifted - lse

    def _output_loss(self, z, idx):
        y = self._rows_labels(idx)
        logp = self._log_softmax(z)
        return -float(logp[np.arange(len(y)), y].sum())

    def _output_delta(self, z, idx):
        y = self._rows_labels(idx)
        p = np.exp(self._log_softmax(z))
        p[np.arange(len(y)), y] -= 1.0
        return p

    def _output_delta_directional(self, z, rz, idx):
        # R{softmax(z)} = p * rz - p * sum_j p_j rz_j; the one-hot target
        # term is constant so R{delta} = R{p}.
        p = np.exp(self._log_softmax(z))
        prz = p * rz
        return prz - p * prz.sum(axis=1, keepdims=True)

    def pointwise_log_likelihood(self, theta, features, labels):
        theta = self._check_theta(theta)
        x = np.asarray(features, dtype=float)
        y = np.asarray(labels).astype(np.intp).reshape(-1)
        z = self._forward(theta, x)[-1]
        logp = self._log_softmax(z)
        return logp[np.arange(len(y)), y]


class GaussianMixture2DObjective(Objective):
    """Negative log-density of a Gaussian mixture posterior.

    A small nonconvex target for 2-D particle-cloud demos. Gradient and
    Hessian follow from responsibilities r_i:
        grad = sum_i r_i P_i d_i
        hess = sum_i r_i (P_i - u_i u_i^T) + grad grad^T,  u_i = P_i d_i,
    with P_i the component precision and d_i = theta - mean_i.
    """

    kind = "gaussian-mixture-2d"

    def __init__(self, weights, means, covariances):
        w = np.asarray(weights, dtype=float)
        mu = np.asarray(means, dtype=float)
        cov = np.asarray(covariances, dtype=float)
        if w.ndim != 1 or mu.ndim != 2 or cov.ndim != 3:
            raise ValueError("expected weights (k,), means (k,d), covariances (k,d,d)")
        if not (len(w) == len(mu) == len(cov)) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must match components and sum to 1")
        self.weights = w
        self.means = mu
        self.dim = mu.shape[1]
        self.n_data = 0
        self.precisions = np.stack([np.linalg.inv(c) for c in cov])
        self._log_norm = np.array(
            [
                math.log(wi) - 0.5 * (self.dim * LOG_2PI + np.linalg.slogdet(c)[1])
                for wi, c in zip(w, cov)
            ]
        )

    def _component_logs(self, theta):
        d = theta[None, :] - self.means
        quad = np.einsum("ki,kij,kj->k", d, self.precisions, d)
        return self._log_norm - 0.5 * quad, d

    def _responsibilities(self, theta):
        logs, d = self._component_logs(theta)
        m = logs.max()
        p = np.exp(logs - m)
        total = p.sum()
        return p / total, d, m + math.log(total)

    def _value(self, theta, idx):
        logs, _ = self._component_logs(theta)
        m = logs.max()
        return -(m + math.log(np.sum(np.exp(logs - m))))

    def _gradient(self, theta, idx):
        r, d, _ = self._responsibilities(theta)
        u = np.einsum("kij,kj->ki", self.precisions, d)
        return np.einsum("k,ki->i", r, u)

    def _hvp(self, theta, vector, idx):
        r, d, _ = self._responsibilities(theta)
        u = np.einsum("kij,kj->ki", self.precisions, d)
        g = np.einsum("k,ki->i", r, u)
        h = np.einsum("k,kij->ij", r, self.precisions)
        h -= np.einsum("k,ki,kj->ij", r, u, u)
        h += np.outer(g, g)
        return h @ vector

    def gradient_many(self, thetas: np.ndarray) -> np.ndarray:
        d = thetas[:, None, :] - self.means[None, :, :]
        quad = np.einsum("nki,kij,nkj->nk", d, self.precisions, d)
        logs = self._log_norm[None, :] - 0.5 * quad
        m = logs.max(axis=1, keepdims=True)
        p = np.exp(logs - m)
        r = p / p.sum(axis=1, keepdims=True)
        u = np.einsum("kij,nkj->nki", self.precisions, d)
        return np.einsum("nk,nki->ni", r, u)
