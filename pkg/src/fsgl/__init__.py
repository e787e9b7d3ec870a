"""Fused sparse group lasso regression toolkit.

Combines elementwise, fusion (anisotropic total variation), and group
penalties over grid-structured coefficients, solved by ADMM, with
cross-validated tuning over an (alpha, gamma, lambda) grid and a synthetic
experiment harness.
"""

from .admm import (
    AdmmConfig,
    AdmmState,
    LinearSolver,
    SolveReport,
    objective_value,
    soft_threshold_vector,
    solve,
)
from .errors import FsglError, InternalSolverError, StructureError, ValidationError
from .model import (
    FitResult,
    StandardizedDesign,
    TuningPoint,
    adaptive_weights,
    bias_variance_decompose,
    estimator_label,
    fit,
    map_tuning,
    mse_beta,
    mse_pred,
    predict,
    ridge_fit,
    standardize,
)
from .penalty import (
    FusionStructure,
    GridSpec,
    GroupPartition,
    PenaltyOperator,
    adjacency_count,
    build_fusion_matrix,
    build_penalty_operator,
)
from .sim import Scenario, SimDataset, build_scenario, generate_dataset, run_experiment
from .tuning import (
    CvPlan,
    CvSurface,
    cross_validate,
    lambda_grid,
    make_folds,
    ridge_cv,
    select_model,
)

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig",
    "AdmmState",
    "CvPlan",
    "CvSurface",
    "FitResult",
    "FsglError",
    "FusionStructure",
    "GridSpec",
    "GroupPartition",
    "InternalSolverError",
    "LinearSolver",
    "PenaltyOperator",
    "Scenario",
    "SimDataset",
    "SolveReport",
    "StandardizedDesign",
    "StructureError",
    "TuningPoint",
    "ValidationError",
    "adaptive_weights",
    "adjacency_count",
    "bias_variance_decompose",
    "build_fusion_matrix",
    "build_penalty_operator",
    "build_scenario",
    "cross_validate",
    "estimator_label",
    "fit",
    "generate_dataset",
    "lambda_grid",
    "make_folds",
    "map_tuning",
    "mse_beta",
    "mse_pred",
    "objective_value",
    "predict",
    "ridge_cv",
    "ridge_fit",
    "run_experiment",
    "select_model",
    "soft_threshold_vector",
    "solve",
    "standardize",
]
