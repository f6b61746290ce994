"""Two-step multi-task regression with a sparse shared coefficient covariance."""

from .covariance import (
    GramLoss,
    SccQuadratic,
    build_scc_quadratic,
    fit_covariance,
    fit_diag_lowrank,
    fit_loo,
    fit_partial_full,
    fit_scc_diagonal,
    fit_scc_trace,
    frobenius_loss,
)
from .model import (
    CoefficientSet,
    ConvergenceError,
    CovarianceEstimate,
    DiagonalCovariance,
    DiagPlusLowRank,
    DimensionError,
    FullCovariance,
    MultiTaskDataset,
    SolverConfig,
    SolveTrace,
    TaskData,
    check_dataset,
    covariance_as_matrix,
    validate_dataset,
)
from .regression import (
    GroupLassoResult,
    RankDeficientError,
    RidgeSolveOptions,
    TwoStepFit,
    gls_ls_fit,
    group_lasso_fit,
    ridge_with_covariance,
    two_step_fit,
)

__version__ = "0.1.0"
