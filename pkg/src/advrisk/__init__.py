"""Asymptotic accuracy theory for adversarially trained linear classifiers
on Gaussian mixtures, with an embedded Monte-Carlo validation pipeline."""

__version__ = "0.1.0"

from .errors import (
    AdvriskError,
    ConfigError,
    DegenerateModelError,
    KernelConvergenceError,
    PhaseBoundaryError,
    SolverError,
)
from .kernels import (
    EXPONENTIAL,
    HINGE,
    LOGISTIC,
    LossModel,
    MeanDistribution,
    QuadratureRule,
    cal_j,
    expected_moreau,
    f_fun,
    gaussian_mean,
    jq,
    make_loss,
    moreau_loss,
    pospart_sq_moment,
    soft_threshold,
)
from .separability import (
    CovarianceSpec,
    ThresholdResult,
    delta_star,
    margin_objective,
    omega,
    separability_ratio,
    stieltjes,
)
from .theory import (
    ProblemSpec,
    SaddleConfig,
    SolveResult,
    TheoryPrediction,
    predict,
    solve_nonseparable,
    solve_separable,
)
from .gmm import Dataset, dump_dataset, load_dataset, sample_dataset, sample_mean
from .training import (
    MaxMarginOutcome,
    ModelEstimate,
    eval_population,
    is_robustly_separable,
    max_margin,
    realized_budget,
    robust_loss,
    robust_loss_grad,
    train_convex,
    train_gd,
)

__all__ = [name for name in dir() if not name.startswith("_")]
