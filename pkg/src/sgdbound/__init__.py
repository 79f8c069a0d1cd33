"""sgdbound: SGD training with an online marginal-likelihood lower bound.

Running gradient descent from a random initialization defines, across
restarts, a distribution over parameters at every iteration. This package
tracks the entropy of that distribution during a single run (via the
log-determinant of each step's Jacobian) and combines it with the log
joint density to maintain a lower bound on the log marginal likelihood,
usable for early stopping and hyperparameter selection without a
validation set.
"""

__version__ = "0.1.0"

from .models import (
    BatchSelector,
    BayesLinearRegressionObjective,
    DimensionMismatchError,
    GaussianMixture2DObjective,
    GaussianPrior,
    MLPClassificationObjective,
    MLPRegressionObjective,
    NonFiniteValueError,
    Objective,
    QuadraticObjective,
    full_batch,
    isotropic_gaussian_entropy,
)
from .entropy import (
    EntropyDelta,
    SingularJacobianError,
    StepJacobianSpec,
    TAYLOR_VALID_LIMIT,
    exact_logdet_step,
    lambda_max_estimate,
    probe_logdet_estimate,
    taylor_bound_direction_check,
    taylor_logdet_lower_bound,
)
from .training import (
    BatchSchedule,
    DivergenceError,
    EnsembleResult,
    EntropyLedger,
    RunConfig,
    TrainTrace,
    initialize,
    run_ensemble,
    run_training,
    sgd_step,
    warp_gradient,
)
from .bound import (
    BoundReport,
    analytic_evidence,
    analytic_pushforward_entropy,
    bound_at,
    energy_estimate,
)
from .data import (
    Dataset,
    DataFormatError,
    DelimitedSchema,
    denormalize,
    load_delimited,
    load_idx,
    make_synthetic_regression,
    save_idx,
    split,
)

__all__ = [name for name in dir() if not name.startswith("_")]
