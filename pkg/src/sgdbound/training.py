"""SGD training loop with online entropy accounting.

The loop draws the initial parameter vector from an isotropic Gaussian,
then alternates an entropy update (log-determinant of the step Jacobian,
evaluated at the pre-step point on the same minibatch the step will use)
with the parameter update. Setting a positive gradient threshold turns on
the entropy-friendly warp, which freezes near-converged coordinates so
the implicit distribution keeps its spread.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .entropy import (
    EXACT,
    TAYLOR_PROBE,
    StepJacobianSpec,
    lambda_max_estimate,
    taylor_logdet_lower_bound,
    exact_logdet_step,
)
from .models import (
    BatchSelector,
    GaussianPrior,
    isotropic_gaussian_entropy,
    NonFiniteValueError,
)

log = logging.getLogger(__name__)

FIXED_SEQUENCE = "fixed-sequence"
RESAMPLED = "resampled"


class DivergenceError(RuntimeError):
    """Training produced a non-finite quantity. Carries the partial trace."""

    def __init__(self, message, iteration=None, step_lambda_max=None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.step_lambda_max = step_lambda_max
        self.trace = trace


@dataclass
class RunConfig:
    """All hyperparameters of a single training run.

    ``estimator`` picks the entropy path: "exact" (dense log-det, small
    models only) or "taylor-probe" (linear-time probe estimator).
    ``grad_threshold`` of 0 is plain SGD; positive values enable the
    entropy-friendly warp. A step size of 0 is degenerate but permitted
    so tests can exercise the identity map.
    """

    step_size: float
    init_scale: float = 1.0
    steps: int = 100
    grad_threshold: float = 0.0
    batch_size: int | None = None  # None = full batch
    batch_mode: str = FIXED_SEQUENCE
    estimator: str = EXACT
    probes_per_step: int = 1
    seed_init: int = 0
    seed_batch: int = 1
    seed_probe: int = 2
    snapshot_stride: int = 0  # 0 = keep only the terminal parameters
    eval_stride: int = 1
    full_energy_stride: int = 0  # 0 = never evaluate full-batch energy
    stability_check_iters: int = 15  # 0 = skip the step-size safety check
    dense_hessian_cap: int = 2000

    def __post_init__(self):
        if self.step_size < 0:
            raise ValueError("step_size must be >= 0")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.grad_threshold < 0:
            raise ValueError("grad_threshold must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.batch_mode not in (FIXED_SEQUENCE, RESAMPLED):
            raise ValueError(f"unknown batch_mode '{self.batch_mode}'")
        if self.estimator not in (EXACT, TAYLOR_PROBE):
            raise ValueError(f"unknown estimator '{self.estimator}'")
        if self.probes_per_step < 1:
            raise ValueError("probes_per_step must be >= 1")
        if self.eval_stride < 1:
            raise ValueError("eval_stride must be >= 1")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


class EntropyLedger:
    """Running differential entropy: Gaussian initial entropy plus the
    per-step log-determinant deltas, in nats."""

    def __init__(self, initial_entropy: float):
        self.initial_entropy = float(initial_entropy)
        self.deltas = []
        self._delta_sum = 0.0

    @property
    def entropy(self) -> float:
        return self.initial_entropy + self._delta_sum

    def append(self, delta) -> None:
        self.deltas.append(delta)
        self._delta_sum += delta.value

    def entropy_at(self, t: int) -> float:
        """Entropy after t completed steps."""
        if t < 0 or t > len(self.deltas):
            raise IndexError(f"ledger has {len(self.deltas)} deltas, asked for t={t}")
        return self.initial_entropy + sum(d.value for d in self.deltas[:t])

    def __len__(self) -> int:
        return len(self.deltas)


class BatchSchedule:
    """Deterministic stream of batch selectors, a pure function of its seed.

    fixed-sequence reshuffles once per epoch and walks the permutation in
    chunks, so runs differing only in their init seed see identical
    gradient sequences. resampled draws each batch independently.
    """

    def __init__(self, n_data, batch_size, mode, seed):
        self.n_data = n_data
        if batch_size is not None and n_data and batch_size > n_data:
            batch_size = None
        self.batch_size = batch_size
        self.mode = mode
        self._rng = np.random.default_rng(seed)
        self._position = 0
        self._perm = None

    def next_batch(self):
        if self.n_data == 0 or self.batch_size is None:
            return None  # dataset-free objective or full batch
        n, m = self.n_data, self.batch_size
        if self.mode == RESAMPLED:
            idx = self._rng.choice(n, size=m, replace=False)
            return BatchSelector(idx, n / m, 0)
        if self._perm is None or self._position >= n:
            self._perm = self._rng.permutation(n)
            self._position = 0
        start = self._position
        idx = self._perm[start : start + m]
        self._position += len(idx)
        return BatchSelector(idx, n / len(idx), start // m)


@dataclass(eq=False)
class TrainTrace:
    """Per-iteration record of one run, indexed 0..completed_steps."""

    config: RunConfig
    loss: np.ndarray
    energy: np.ndarray
    entropy: np.ndarray
    bound: np.ndarray
    test_log_likelihood: np.ndarray | None
    full_energy: np.ndarray | None
    theta_final: np.ndarray
    ledger: EntropyLedger
    snapshots: dict = field(default_factory=dict)
    run_warnings: list = field(default_factory=list)
    completed_steps: int = 0
    diverged: bool = False

    @property
    def iterations(self) -> np.ndarray:
        return np.arange(len(self.loss))

    def argmax_bound(self) -> int:
        return int(np.argmax(self.bound))

    def argmax_test_log_likelihood(self):
        if self.test_log_likelihood is None:
            return None
        col = self.test_log_likelihood
        if np.all(np.isnan(col)):
            return None
        return int(np.nanargmax(col))


def initialize(config: RunConfig, dim: int):
    """Draw theta_0 ~ N(0, init_scale^2 I) and open the entropy ledger."""
    rng = np.random.default_rng(config.seed_init)
    theta0 = config.init_scale * rng.standard_normal(dim)
    ledger = EntropyLedger(isotropic_gaussian_entropy(dim, config.init_scale))
    return theta0, ledger


def warp_gradient(gradient: np.ndarray, threshold: float):
    """Entropy-friendly warp g -> g - t*tanh(g/t) with weights tanh(g/t)^2.

    Coordinates with |g| well below the threshold barely move (cubic
    suppression), so optimization stops draining their entropy. A zero
    threshold returns the gradient untouched with unit weights.
    """
    if threshold == 0:
        return gradient, np.ones_like(gradient)
    u = np.tanh(gradient / threshold)
    return gradient - threshold * u, u * u


def _check_finite_array(name, arr, iteration):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(
            f"non-finite {name} at iteration {iteration}", iteration=iteration
        )


def sgd_step(
    objective,
    theta,
    batch,
    config: RunConfig,
    ledger: EntropyLedger,
    probe_rng=None,
    step_lambda_max=None,
):
    """One descent step: append the entropy delta (evaluated at the current
    point, same batch), then update the parameters."""
    if probe_rng is None:
        probe_rng = np.random.default_rng(config.seed_probe)
    try:
        grad = objective.gradient(theta, batch)
    except NonFiniteValueError as exc:
        raise DivergenceError(str(exc)) from exc
    warped, weights = warp_gradient(grad, config.grad_threshold)
    spec = StepJacobianSpec(
        config.step_size,
        weights if config.grad_threshold > 0 else None,
    )
    if config.estimator == EXACT:
        hessian = objective.dense_hessian(theta, batch, cap=config.dense_hessian_cap)
        delta = exact_logdet_step(hessian, spec)
    else:
        delta = taylor_logdet_lower_bound(
            objective,
            theta,
            batch,
            spec,
            probe_rng,
            probes=config.probes_per_step,
            step_lambda_max=step_lambda_max,
        )
    ledger.append(delta)
    theta_next = theta - config.step_size * warped
    _check_finite_array("parameters", theta_next, None)
    return theta_next


def _eval_arrays(eval_data):
    if eval_data is None:
        return None
    if hasattr(eval_data, "features"):
        return eval_data.features, eval_data.targets
    features, targets = eval_data
    return np.asarray(features), np.asarray(targets)


def run_training(objective, config: RunConfig, prior=None, eval_data=None) -> TrainTrace:
    """Run the full loop for ``config.steps`` iterations.

    The initializer doubles as the prior unless one is passed explicitly;
    the bound stays valid either way, with the ledger anchored to the
    initializer's entropy and the energy to the declared prior.
    On divergence the partial trace is attached to the raised error.
    """
    if prior is None:
        prior = GaussianPrior(config.init_scale)
    theta, ledger = initialize(config, objective.dim)
    schedule = BatchSchedule(
        objective.n_data, config.batch_size, config.batch_mode, config.seed_batch
    )
    probe_rng = np.random.default_rng(config.seed_probe)
    evals = _eval_arrays(eval_data)

    total = config.steps
    loss = np.full(total + 1, np.nan)
    energy = np.full(total + 1, np.nan)
    entropy = np.full(total + 1, np.nan)
    bound = np.full(total + 1, np.nan)
    test_ll = np.full(total + 1, np.nan) if evals is not None else None
    full_energy = np.full(total + 1, np.nan) if config.full_energy_stride else None

    snapshots = {}
    warnings_list = []
    step_lambda_max = None

    def partial_trace(t):
        return TrainTrace(
            config=config,
            loss=loss[: t + 1],
            energy=energy[: t + 1],
            entropy=entropy[: t + 1],
            bound=bound[: t + 1],
            test_log_likelihood=None if test_ll is None else test_ll[: t + 1],
            full_energy=None if full_energy is None else full_energy[: t + 1],
            theta_final=theta,
            ledger=ledger,
            snapshots=snapshots,
            run_warnings=warnings_list,
            completed_steps=t,
            diverged=True,
        )

    def diverge(exc, t, batch):
        diag = step_lambda_max
        if diag is None:
            try:
                diag = config.step_size * lambda_max_estimate(
                    objective, theta, batch, iters=10
                )
            except FloatingPointError:
                diag = float("nan")
        raise DivergenceError(
            f"{exc} (step {t}, step_size*lambda_max ~= {diag:.3g})",
            iteration=t,
            step_lambda_max=diag,
            trace=partial_trace(max(t - 1, 0) if math.isnan(loss[t]) else t),
        ) from exc

    for t in range(total + 1):
        batch = schedule.next_batch()
        try:
            loss[t] = objective.value(theta, batch)
        except NonFiniteValueError as exc:
            diverge(exc, t, batch)
        energy[t] = prior.log_density(theta) - loss[t]
        entropy[t] = ledger.entropy
        bound[t] = energy[t] + entropy[t]
        if evals is not None and (t % config.eval_stride == 0 or t == total):
            test_ll[t] = float(
                np.mean(objective.pointwise_log_likelihood(theta, *evals))
            )
        if full_energy is not None and (
            t % config.full_energy_stride == 0 or t == total
        ):
            full_energy[t] = prior.log_density(theta) - objective.value(theta, None)
        if config.snapshot_stride and t % config.snapshot_stride == 0:
            snapshots[t] = theta.copy()
        if t == total:
            break

        if t == 0 and config.stability_check_iters:
            lam = lambda_max_estimate(
                objective, theta, batch, iters=config.stability_check_iters
            )
            step_lambda_max = config.step_size * lam
            if step_lambda_max >= 1.0:
                msg = (
                    f"step_size * lambda_max ~= {step_lambda_max:.3g} >= 1: "
                    "descent may be unstable and the entropy estimate unreliable"
                )
                warnings_list.append(msg)
                log.warning(msg)

        try:
            theta = sgd_step(
                objective, theta, batch, config, ledger, probe_rng, step_lambda_max
            )
        except DivergenceError as exc:
            diverge(exc, t, batch)

    return TrainTrace(
        config=config,
        loss=loss,
        energy=energy,
        entropy=entropy,
        bound=bound,
        test_log_likelihood=test_ll,
        full_energy=full_energy,
        theta_final=theta,
        ledger=ledger,
        snapshots=snapshots,
        run_warnings=warnings_list,
        completed_steps=total,
    )


@dataclass(eq=False)
class EnsembleResult:
    """Traces for each member plus an error report for failed members."""

    traces: list
    errors: list
    ensemble_test_log_likelihood: float | None = None

    @property
    def n_failed(self) -> int:
        return sum(e is not None for e in self.errors)


def run_ensemble(objective, config: RunConfig, count: int, prior=None, eval_data=None):
    """Independent runs k = 0..count-1 with seed_init + k (posterior samples).

    The batch sequence is shared in fixed-sequence mode; probe streams are
    split per member. Member failures are tolerated and reported. With
    held-out data, the ensemble-averaged predictive log-likelihood (mean
    over examples of log of the mean member density) is returned.
    """
    if count < 1:
        raise ValueError("ensemble needs count >= 1")
    traces, errors = [], []
    for k in range(count):
        member = config.replace(
            seed_init=config.seed_init + k,
            seed_probe=config.seed_probe + k,
            seed_batch=config.seed_batch
            + (k if config.batch_mode == RESAMPLED else 0),
        )
        try:
            traces.append(run_training(objective, member, prior, eval_data))
            errors.append(None)
        except DivergenceError as exc:
            log.warning("ensemble member %d diverged: %s", k, exc)
            traces.append(exc.trace)
            errors.append(str(exc))

    ensemble_ll = None
    evals = _eval_arrays(eval_data)
    good = [t for t, e in zip(traces, errors) if e is None and t is not None]
    if evals is not None and good:
        member_lls = np.stack(
            [
                objective.pointwise_log_likelihood(t.theta_final, *evals)
                for t in good
            ]
        )
        # log of the mean predictive density per example, then mean
        m = member_lls.max(axis=0)
        log_mean = m + np.log(np.mean(np.exp(member_lls - m), axis=0))
        ensemble_ll = float(np.mean(log_mean))
    return EnsembleResult(traces, errors, ensemble_ll)
