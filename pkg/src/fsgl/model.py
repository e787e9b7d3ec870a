"""User-facing regression layer: standardization, tuning reparameterization,
ridge initialization, adaptive weights, prediction, and error metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import admm
from .errors import ValidationError
from .penalty import FusionStructure, GroupPartition, PenaltyOperator

DEFAULT_WEIGHT_CAP = 1e8


@dataclass(frozen=True)
class StandardizedDesign:
    """Centered, unit-SD design with the statistics needed to undo it.

    Columns are scaled by the sample standard deviation (divisor n-1).
    Constant columns are flagged, left as all-zero columns with sd recorded
    as 1, and their coefficients are forced to zero downstream.
    """

    x_std: np.ndarray
    col_means: np.ndarray
    col_sds: np.ndarray
    y_mean: float
    y_centered: np.ndarray
    constant_mask: np.ndarray

    @property
    def n(self) -> int:
        return self.x_std.shape[0]

    @property
    def p(self) -> int:
        return self.x_std.shape[1]


def standardize(x_raw: np.ndarray, y_raw: np.ndarray) -> StandardizedDesign:
    """Center and scale columns of x, center y."""
    x = np.asarray(x_raw, dtype=float)
    y = np.asarray(y_raw, dtype=float).ravel()
    if x.ndim != 2:
        raise ValidationError("design matrix must be 2-dimensional")
    n, p = x.shape
    if n < 2 or p < 1:
        raise ValidationError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
    if y.size != n:
        raise ValidationError(f"response length {y.size} does not match n={n}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValidationError("design or response contains NaN or infinity")

    constant = (x == x[0]).all(axis=0)
    if constant.any():
        warnings.warn(
            f"{int(constant.sum())} constant column(s); their coefficients "
            "are forced to zero",
            stacklevel=2,
        )
    means = x.mean(axis=0)
    sds = x.std(axis=0, ddof=1)
    sds = np.where(constant, 1.0, sds)
    x_std = (x - means) / sds
    x_std[:, constant] = 0.0
    y_mean = float(y.mean())
    return StandardizedDesign(
        x_std=x_std,
        col_means=means,
        col_sds=sds,
        y_mean=y_mean,
        y_centered=y - y_mean,
        constant_mask=constant,
    )


def map_tuning(lam: float, alpha: float, gamma: float) -> tuple[float, float, float]:
    """(lam, alpha, gamma) -> (lam1, lam2, lam3) = (a*g*lam, (1-g)*lam, (1-a)*g*lam)."""
    if lam <= 0:
        raise ValidationError("lambda must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError(f"gamma must lie in [0, 1], got {gamma}")
    return alpha * gamma * lam, (1.0 - gamma) * lam, (1.0 - alpha) * gamma * lam


@dataclass(frozen=True)
class TuningPoint:
    """Overall level lam > 0 with mixing weights alpha, gamma in [0, 1]."""

    lam: float
    alpha: float
    gamma: float

    def __post_init__(self):
        map_tuning(self.lam, self.alpha, self.gamma)  # validates

    @property
    def lambdas(self) -> tuple[float, float, float]:
        return map_tuning(self.lam, self.alpha, self.gamma)

    @classmethod
    def from_lambdas(cls, lam1: float, lam2: float, lam3: float) -> "TuningPoint":
        """Invert the reparameterization; alpha defaults to 1 when gamma = 0."""
        if min(lam1, lam2, lam3) < 0:
            raise ValidationError("regularization parameters must be nonnegative")
        lam = lam1 + lam2 + lam3
        if lam <= 0:
            raise ValidationError("at least one regularization parameter must be positive")
        gamma = (lam1 + lam3) / lam
        alpha = lam1 / (lam1 + lam3) if lam1 + lam3 > 0 else 1.0
        return cls(lam=lam, alpha=alpha, gamma=gamma)


def estimator_label(tuning: TuningPoint, adaptive: bool = False) -> str:
    """Human-readable name derived from which penalty terms are active."""
    lam1, lam2, lam3 = tuning.lambdas
    name = {
        (True, False, False): "lasso",
        (False, False, True): "group lasso",
        (False, True, False): "fused (total variation)",
        (True, True, False): "fused lasso",
        (True, False, True): "sparse group lasso",
        (False, True, True): "fused group lasso",
        (True, True, True): "fused sparse group lasso",
        (False, False, False): "least squares",
    }[(lam1 > 0, lam2 > 0, lam3 > 0)]
    return f"adaptive {name}" if adaptive else name


@dataclass
class FitResult:
    """Fit in both coordinate systems plus solver diagnostics.

    Predictions from (beta_std, standardized x) and from (beta_orig,
    intercept_orig, raw x) agree to floating point accuracy.
    """

    beta_std: np.ndarray
    beta_orig: np.ndarray
    intercept_orig: float
    support: np.ndarray
    report: admm.SolveReport
    tuning: TuningPoint


def fit(
    design: StandardizedDesign,
    penalty: PenaltyOperator,
    tuning: TuningPoint,
    config: admm.AdmmConfig | None = None,
    weights: np.ndarray | None = None,
    warm_start: admm.AdmmState | None = None,
    linear_solver: admm.LinearSolver | None = None,
) -> FitResult:
    """Solve at one tuning point and back-transform to the original scale.

    ``weights`` overrides the penalty's block weights (adaptive fits).  The
    support is read from the singleton blocks of theta, where the
    soft-threshold produces exact zeros.
    """
    if weights is not None:
        penalty = penalty.with_weights(weights)
    beta_std, report = admm.solve(
        design.x_std,
        design.y_centered,
        penalty,
        tuning.lambdas,
        config=config,
        warm_start=warm_start,
        linear_solver=linear_solver,
    )
    beta_std = beta_std.copy()
    beta_std[design.constant_mask] = 0.0
    beta_orig = beta_std / design.col_sds
    intercept = design.y_mean - float(beta_orig @ design.col_means)
    theta_singletons = report.state.theta[: penalty.p]
    support = np.flatnonzero((theta_singletons != 0.0) & ~design.constant_mask)
    return FitResult(
        beta_std=beta_std,
        beta_orig=beta_orig,
        intercept_orig=intercept,
        support=support,
        report=report,
        tuning=tuning,
    )


def ridge_fit(design: StandardizedDesign, lambda_ridge: float) -> np.ndarray:
    """Solve ``0.5 ||y - X b||^2 + lambda_ridge ||b||^2`` in closed form.

    The stationarity condition gives (X^T X + 2 lambda I) b = X^T y; for
    n < p the equivalent n-by-n system X^T (X X^T + 2 lambda I)^{-1} y is
    solved instead.
    """
    x, y = design.x_std, design.y_centered
    n, p = x.shape
    if lambda_ridge < 0:
        raise ValidationError("lambda_ridge must be nonnegative")
    if lambda_ridge == 0 and n < p:
        raise ValidationError("lambda_ridge must be positive when n < p")
    try:
        if n < p:
            gram = x @ x.T + 2.0 * lambda_ridge * np.eye(n)
            return x.T @ np.linalg.solve(gram, y)
        gram = x.T @ x + 2.0 * lambda_ridge * np.eye(p)
        return np.linalg.solve(gram, x.T @ y)
    except np.linalg.LinAlgError as err:
        raise ValidationError(f"ridge system is singular: {err}") from None


def adaptive_weights(
    beta_ridge: np.ndarray,
    fusion: FusionStructure,
    groups: GroupPartition,
    cap: float = DEFAULT_WEIGHT_CAP,
) -> np.ndarray:
    """Reciprocal-magnitude block weights from an initial ridge estimate.

    Singleton weight 1/|b_j|, fusion weight 1/|b_a - b_b| per edge, group
    weight 1/||b_g||_2; weights exceeding ``cap`` (including divisions by
    zero) are set to ``cap``.
    """
    b = np.asarray(beta_ridge, dtype=float).ravel()
    if not np.isfinite(b).all():
        raise ValidationError("ridge coefficients must be finite")
    if b.size != groups.p or b.size != fusion.p:
        raise ValidationError("ridge coefficient length does not match the structure")
    if cap <= 0:
        raise ValidationError("weight cap must be positive")

    pos, neg = fusion.signed_columns
    denom_single = np.abs(b)
    denom_fusion = np.abs(b[pos] - b[neg])
    order = np.argsort(groups.assignment, kind="stable")
    starts = np.concatenate(([0], np.cumsum(groups.sizes)[:-1]))
    bg = b[order]
    denom_group = np.sqrt(np.add.reduceat(bg * bg, starts))

    denom = np.concatenate([denom_single, denom_fusion, denom_group])
    with np.errstate(divide="ignore"):
        w = 1.0 / denom
    return np.minimum(w, cap)


def predict(
    fit_result: FitResult, x_new_raw: np.ndarray, design: StandardizedDesign
) -> np.ndarray:
    """Predict for raw rows using training-set standardization statistics."""
    x_new = np.atleast_2d(np.asarray(x_new_raw, dtype=float))
    if x_new.shape[1] != design.p:
        raise ValidationError(
            f"new data has {x_new.shape[1]} columns, expected {design.p}"
        )
    x_std = (x_new - design.col_means) / design.col_sds
    return design.y_mean + x_std @ fit_result.beta_std


def mse_beta(beta_hat: np.ndarray, beta_true: np.ndarray) -> float:
    """Mean squared coefficient error ``||b_hat - b||^2 / p``."""
    return _mean_sq_diff(beta_hat, beta_true)


def mse_pred(y_hat: np.ndarray, y_true: np.ndarray) -> float:
    """Mean squared prediction error ``||y_hat - y||^2 / n``."""
    return _mean_sq_diff(y_hat, y_true)


def _mean_sq_diff(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ValidationError(f"length mismatch: {a.size} vs {b.size}")
    d = a - b
    return float(d @ d) / a.size


def bias_variance_decompose(
    predictions: np.ndarray, mean_function: np.ndarray
) -> tuple[float, float]:
    """Squared bias and variance of replicate predictions at fixed test points.

    ``predictions`` is R x n_test over R replicate models; ``mean_function``
    holds E[y|x] at each test point.  Per point, bias^2 is the squared
    deviation of the replicate-mean prediction and variance is the
    population variance across replicates; both are averaged over points.
    """
    preds = np.asarray(predictions, dtype=float)
    mean_fn = np.asarray(mean_function, dtype=float).ravel()
    if preds.ndim != 2:
        raise ValidationError("predictions must be a replicate-by-point matrix")
    if preds.shape[0] < 2:
        raise ValidationError("need at least two replicates")
    if preds.shape[1] != mean_fn.size:
        raise ValidationError("test-point count mismatch")
    avg = preds.mean(axis=0)
    sq_bias = float(np.mean((avg - mean_fn) ** 2))
    variance = float(np.mean(preds.var(axis=0, ddof=0)))
    return sq_bias, variance
