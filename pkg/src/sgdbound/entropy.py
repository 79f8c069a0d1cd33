"""Per-step entropy change of the gradient-descent update map.

A descent step theta -> theta - a * g(theta) has Jacobian I - a*H (with a
diagonal weighting when the gradient warp is active), and the log
absolute determinant of that Jacobian is the change in differential
entropy of the parameter distribution under the step. Two estimators:

* ``exact_logdet_step``: dense pivoted factorization, exact up to float,
  O(dim^3), for small problems and for oracles.
* ``taylor_logdet_lower_bound``: a probe estimator needing two
  Hessian-vector products per probe. Its expectation over standard
  normal probes is -a*tr(H) - a^2*tr(H^2), which lower-bounds the exact
  log-determinant as long as every eigenvalue satisfies a*lambda < 0.68
  (the radius where the second-order expansion of log(1-x) stops being
  a lower bound).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# log(1-x) >= -x - x^2 holds for x below this radius (and for all x < 0).
TAYLOR_VALID_LIMIT = 0.68

EXACT = "exact"
TAYLOR_PROBE = "taylor-probe"


class SingularJacobianError(ArithmeticError):
    """The step Jacobian is singular: a step size times an eigenvalue hit 1
    and the entropy change is infinitely negative."""


def _hvp_closure(objective, theta, batch):
    make = getattr(objective, "make_hvp", None)
    if make is not None:
        return make(theta, batch)
    return lambda v: objective.hessian_vector_product(theta, v, batch)


@dataclass(frozen=True, eq=False)
class StepJacobianSpec:
    """Step size plus optional per-parameter warp weights in [0, 1].

    Absent weights mean plain gradient descent (all ones). Step size 0 is
    a degenerate identity map, permitted for tests.
    """

    step_size: float
    warp_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.step_size < 0:
            raise ValueError(f"step size must be >= 0, got {self.step_size}")
        w = self.warp_weights
        if w is not None:
            w = np.asarray(w, dtype=float)
            if w.min() < 0.0 or w.max() > 1.0:
                raise ValueError("warp weights must lie in [0, 1]")
            object.__setattr__(self, "warp_weights", w)


@dataclass(frozen=True)
class EntropyDelta:
    """One step's entropy change and how it was produced."""

    value: float
    mode: str
    probes_used: int = 0
    valid: bool = True

    def __post_init__(self):
        if self.mode not in (EXACT, TAYLOR_PROBE):
            raise ValueError(f"unknown estimator mode '{self.mode}'")
        if self.mode == EXACT and self.probes_used != 0:
            raise ValueError("exact mode uses no probes")


def exact_logdet_step(hessian: np.ndarray, spec: StepJacobianSpec) -> EntropyDelta:
    """log |det(I - a * diag(w) * H)| via a dense pivoted factorization.

    Uses absolute values of the factor diagonal, so directions of
    negative curvature (eigenvalues of the Jacobian above 1) contribute
    their correct positive entropy change.
    """
    h = np.asarray(hessian, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"hessian must be square, got shape {h.shape}")
    weighted = h if spec.warp_weights is None else spec.warp_weights[:, None] * h
    jac = np.eye(h.shape[0]) - spec.step_size * weighted
    sign, logabs = np.linalg.slogdet(jac)
    if sign == 0 or not np.isfinite(logabs):
        raise SingularJacobianError(
            "step Jacobian is singular (step_size * eigenvalue = 1 somewhere); "
            "entropy change is infinitely negative"
        )
    return EntropyDelta(float(logabs), EXACT)


def probe_logdet_estimate(hvp, probe: np.ndarray, spec: StepJacobianSpec) -> float:
    """Single-probe estimate r.(-2r + 3r1 - r2) of the Taylor lower bound.

    r1 and r2 are one and two applications of the step Jacobian to the
    probe; algebraically the result is -a*r.Hr - a^2*r.H^2r, so its
    expectation over unit-covariance probes is -a*tr(H) - a^2*tr(H^2).
    """
    r0 = np.asarray(probe, dtype=float)

    def apply_jacobian(r):
        hr = hvp(r)
        if spec.warp_weights is not None:
            hr = spec.warp_weights * hr
        return r - spec.step_size * hr

    r1 = apply_jacobian(r0)
    r2 = apply_jacobian(r1)
    # same combination evaluated as increments, so an identity Jacobian
    # yields exactly zero instead of rounding noise
    return float(r0 @ (3.0 * (r1 - r0) - (r2 - r0)))


def taylor_logdet_lower_bound(
    objective,
    theta,
    batch,
    spec: StepJacobianSpec,
    probe_rng: np.random.Generator,
    probes: int = 1,
    step_lambda_max: float | None = None,
) -> EntropyDelta:
    """Probe estimate of the entropy change, averaged over ``probes`` draws.

    Probes are standard normal with unit covariance (the trace identity
    tr(H) = E[r.Hr] requires identity covariance). ``step_lambda_max``,
    when supplied from a spectral check, marks the delta invalid if the
    Taylor regime a*lambda_max < 0.68 has been left.
    """
    if probes < 1:
        raise ValueError("need at least one probe")
    hvp = _hvp_closure(objective, theta, batch)
    total = 0.0
    for _ in range(probes):
        r0 = probe_rng.standard_normal(objective.dim)
        total += probe_logdet_estimate(hvp, r0, spec)
    valid = step_lambda_max is None or step_lambda_max < TAYLOR_VALID_LIMIT
    return EntropyDelta(total / probes, TAYLOR_PROBE, probes, valid)


def taylor_bound_direction_check(hessian: np.ndarray, step_size: float) -> bool:
    """True iff -a*tr(H) - a^2*tr(H^2) <= log|det(I - a H)|. Test helper."""
    h = np.asarray(hessian, dtype=float)
    expectation = -step_size * np.trace(h) - step_size**2 * np.trace(h @ h)
    sign, logabs = np.linalg.slogdet(np.eye(h.shape[0]) - step_size * h)
    if sign == 0:
        return False
    return bool(expectation <= logabs)


def lambda_max_power_iteration(matvec, dim: int, iters: int, rng=None) -> float:
    """Largest-magnitude eigenvalue of a symmetric operator, best effort."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    if norm == 0:
        return 0.0
    v /= norm
    estimate = 0.0
    for _ in range(iters):
        hv = matvec(v)
        norm = float(np.linalg.norm(hv))
        if not np.isfinite(norm):
            return norm
        if norm == 0.0:
            return 0.0
        estimate = norm
        v = hv / norm
    return estimate


def lambda_max_estimate(objective, theta, batch=None, iters: int = 50, rng=None):
    """Power-iteration estimate of |lambda|_max of the objective Hessian."""
    return lambda_max_power_iteration(
        _hvp_closure(objective, theta, batch), objective.dim, iters, rng
    )
