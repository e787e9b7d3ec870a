"""Cross-validation and grid search over (alpha, gamma, lambda).

Each (fold, alpha, gamma) stream sweeps the lambda grid from largest to
smallest with warm starts; beta-update factorizations are shared across all
cells of a fold.  Folds standardize their own training rows by default so
validation rows never leak into the statistics; ``global_standardize``
reproduces the standardize-once-then-split ordering instead.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import admm, model
from .errors import ValidationError
from .penalty import PenaltyOperator


@dataclass(frozen=True)
class CvPlan:
    """Fold assignment for n observations; sizes differ by at most one."""

    k: int
    fold_assignment: np.ndarray
    stratified: bool
    seed: int

    @property
    def n(self) -> int:
        return self.fold_assignment.size


def make_folds(y: np.ndarray, k: int, stratified: bool = False, seed: int = 0) -> CvPlan:
    """Assign observations to k folds, optionally stratified on y.

    Stratified mode sorts y, walks consecutive blocks of k observations,
    and deals one member of each block to each fold in random within-block
    order, so every fold sees a similar outcome distribution.
    """
    y = np.asarray(y).ravel()
    n = y.size
    if k < 2:
        raise ValidationError("need at least 2 folds")
    if k > n:
        raise ValidationError(f"cannot make {k} folds from {n} observations")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=int)
    if stratified:
        order = np.argsort(y, kind="stable")
        for start in range(0, n, k):
            block = order[start : start + k]
            folds = rng.permutation(k)[: block.size]
            assignment[block] = folds
    else:
        order = rng.permutation(n)
        assignment[order] = np.arange(n) % k
    return CvPlan(k=k, fold_assignment=assignment, stratified=stratified, seed=seed)


def lambda_grid(x_min: float, x_max: float, count: int) -> np.ndarray:
    """Descending lambda values 10**x over a uniform x grid (endpoints included)."""
    if count < 2:
        raise ValidationError("lambda grid needs at least 2 points")
    if not x_min < x_max:
        raise ValidationError(f"degenerate exponent interval [{x_min}, {x_max}]")
    return np.logspace(x_min, x_max, count)[::-1].copy()


@dataclass
class CvSurface:
    """Per-(alpha, gamma, lambda) cross-validation errors and selections.

    ``selected_idx[c]`` is the index into ``lambdas`` of the per-cell
    minimizer of mean CV MSE (first occurrence wins, i.e. the largest
    lambda on ties), or -1 when no lambda converged in every fold.
    """

    alpha_gamma: list[tuple[float, float]]
    lambdas: np.ndarray
    fold_mse: np.ndarray  # (cells, lambdas, folds)
    mean_mse: np.ndarray  # (cells, lambdas)
    converged: np.ndarray  # (cells, lambdas) bool, all folds converged
    iterations: np.ndarray  # (cells, lambdas, folds)
    selected_idx: np.ndarray  # (cells,)
    cv_plan: CvPlan
    fold_coefs: np.ndarray | None = None  # (cells, lambdas, folds, p) if kept

    @property
    def n_cells(self) -> int:
        return len(self.alpha_gamma)

    def selected_lambda(self, cell: int) -> float:
        idx = self.selected_idx[cell]
        if idx < 0:
            raise ValidationError("no converged lambda for this cell")
        return float(self.lambdas[idx])

    def fold_rows(self):
        """Rows (alpha, gamma, lambda, fold, mse) over the full surface."""
        for ci, (a, g) in enumerate(self.alpha_gamma):
            for li, lam in enumerate(self.lambdas):
                for f in range(self.cv_plan.k):
                    yield a, g, float(lam), f, float(self.fold_mse[ci, li, f])

    def summary_rows(self):
        """Rows (alpha, gamma, lambda_opt, mean_cv_mse) per cell."""
        for ci, (a, g) in enumerate(self.alpha_gamma):
            idx = self.selected_idx[ci]
            if idx < 0:
                yield a, g, float("nan"), float("nan")
            else:
                yield a, g, float(self.lambdas[idx]), float(self.mean_mse[ci, idx])


def _fold_training_mask(plan: CvPlan, fold: int) -> np.ndarray:
    return plan.fold_assignment != fold


def _run_fold(
    x,
    y,
    penalty,
    unique_cells,
    lambdas,
    plan,
    fold,
    config,
    global_standardize,
    warm_starts,
    keep_fold_coefs,
):
    """All (cell, lambda) fits for one fold; returns nested result arrays."""
    tr = _fold_training_mask(plan, fold)
    va = ~tr
    if global_standardize:
        design_all = model.standardize(x, y)
        x_tr = design_all.x_std[tr]
        y_tr = design_all.y_centered[tr]
        x_va_std = design_all.x_std[va]
        y_offset = design_all.y_mean
    else:
        design_tr = model.standardize(x[tr], y[tr])
        x_tr = design_tr.x_std
        y_tr = design_tr.y_centered
        x_va_std = (x[va] - design_tr.col_means) / design_tr.col_sds
        x_va_std[:, design_tr.constant_mask] = 0.0
        y_offset = design_tr.y_mean
    y_va = y[va]

    lin = admm.LinearSolver(x_tr, penalty)
    n_cells, n_lam = len(unique_cells), len(lambdas)
    mse = np.empty((n_cells, n_lam))
    conv = np.empty((n_cells, n_lam), dtype=bool)
    iters = np.empty((n_cells, n_lam), dtype=int)
    coefs = np.empty((n_cells, n_lam, penalty.p)) if keep_fold_coefs else None
    for ci, fracs in enumerate(unique_cells):
        state = None
        for li, lam in enumerate(lambdas):
            triple = (fracs[0] * lam, fracs[1] * lam, fracs[2] * lam)
            beta, report = admm.solve(
                x_tr,
                y_tr,
                penalty,
                triple,
                config=config,
                warm_start=state if warm_starts else None,
                linear_solver=lin,
            )
            state = report.state
            resid = y_va - (y_offset + x_va_std @ beta)
            mse[ci, li] = float(resid @ resid) / resid.size
            conv[ci, li] = report.converged
            iters[ci, li] = report.iterations
            if keep_fold_coefs:
                coefs[ci, li] = beta
    return mse, conv, iters, coefs


def cross_validate(
    x: np.ndarray,
    y: np.ndarray,
    penalty: PenaltyOperator,
    alpha_gamma: list[tuple[float, float]],
    lambdas: np.ndarray,
    cv_plan: CvPlan,
    config: admm.AdmmConfig | None = None,
    weights: np.ndarray | None = None,
    global_standardize: bool = False,
    warm_starts: bool = True,
    n_jobs: int = 1,
    keep_fold_coefs: bool = False,
) -> CvSurface:
    """Evaluate every (alpha, gamma, lambda, fold) and select lambda per cell.

    ``x`` and ``y`` are raw (unstandardized); each fold standardizes its own
    training portion and carries those statistics to its validation rows.
    (alpha, gamma) pairs mapping to identical (lam1, lam2, lam3) fractions
    (the gamma = 0 column) are computed once and mirrored.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if not alpha_gamma:
        raise ValidationError("alpha/gamma grid is empty")
    lambdas = np.asarray(lambdas, dtype=float).ravel()
    if lambdas.size == 0:
        raise ValidationError("lambda grid is empty")
    if (lambdas <= 0).any():
        raise ValidationError("lambda values must be positive")
    lambdas = np.sort(lambdas)[::-1].copy()
    if cv_plan.n != y.size:
        raise ValidationError("fold plan length does not match data")
    if weights is not None:
        penalty = penalty.with_weights(weights)

    fracs = [model.map_tuning(1.0, a, g) for a, g in alpha_gamma]
    unique_cells: list[tuple[float, float, float]] = []
    cell_to_unique = []
    seen: dict[tuple[float, float, float], int] = {}
    for fr in fracs:
        if fr not in seen:
            seen[fr] = len(unique_cells)
            unique_cells.append(fr)
        cell_to_unique.append(seen[fr])

    args = [
        (
            x,
            y,
            penalty,
            unique_cells,
            lambdas,
            cv_plan,
            fold,
            config,
            global_standardize,
            warm_starts,
            keep_fold_coefs,
        )
        for fold in range(cv_plan.k)
    ]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            fold_results = list(pool.map(_run_fold_args, args))
    else:
        fold_results = [_run_fold_args(a) for a in args]

    n_cells, n_lam, k = len(alpha_gamma), lambdas.size, cv_plan.k
    fold_mse = np.empty((n_cells, n_lam, k))
    converged = np.empty((n_cells, n_lam, k), dtype=bool)
    iterations = np.empty((n_cells, n_lam, k), dtype=int)
    fold_coefs = (
        np.empty((n_cells, n_lam, k, penalty.p)) if keep_fold_coefs else None
    )
    for f, (mse, conv, iters, coefs) in enumerate(fold_results):
        for ci, ui in enumerate(cell_to_unique):
            fold_mse[ci, :, f] = mse[ui]
            converged[ci, :, f] = conv[ui]
            iterations[ci, :, f] = iters[ui]
            if keep_fold_coefs:
                fold_coefs[ci, :, f, :] = coefs[ui]

    mean_mse = fold_mse.mean(axis=2)
    all_conv = converged.all(axis=2)
    n_failed = int((~all_conv).sum())
    if n_failed:
        warnings.warn(
            f"{n_failed} (alpha, gamma, lambda) cell(s) did not converge in "
            "every fold and are excluded from selection",
            stacklevel=2,
        )
    selected = np.full(n_cells, -1, dtype=int)
    for ci in range(n_cells):
        ok = np.flatnonzero(all_conv[ci])
        if ok.size:
            selected[ci] = ok[np.argmin(mean_mse[ci, ok])]
    return CvSurface(
        alpha_gamma=list(alpha_gamma),
        lambdas=lambdas,
        fold_mse=fold_mse,
        mean_mse=mean_mse,
        converged=all_conv,
        iterations=iterations,
        selected_idx=selected,
        cv_plan=cv_plan,
        fold_coefs=fold_coefs,
    )


def _run_fold_args(args):
    return _run_fold(*args)


def select_model(surface: CvSurface) -> tuple[float, float, float]:
    """Global minimizer of mean CV MSE over all converged (alpha, gamma,
    lambda) cells; ties prefer larger lambda, then larger gamma, then
    smaller alpha."""
    best_key = None
    best = None
    for ci, (a, g) in enumerate(surface.alpha_gamma):
        for li, lam in enumerate(surface.lambdas):
            if not surface.converged[ci, li]:
                continue
            key = (surface.mean_mse[ci, li], -lam, -g, a)
            if best_key is None or key < best_key:
                best_key = key
                best = (a, g, float(lam))
    if best is None:
        raise ValidationError("every cross-validation cell failed to converge")
    return best


def ridge_cv(
    x: np.ndarray,
    y: np.ndarray,
    lambdas: np.ndarray,
    cv_plan: CvPlan,
    global_standardize: bool = False,
) -> tuple[float, np.ndarray]:
    """Select a ridge level by k-fold CV over the given lambda grid.

    Returns (best lambda, mean CV MSE per lambda).  Used to initialize
    adaptive weights.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    lambdas = np.sort(np.asarray(lambdas, dtype=float).ravel())[::-1]
    if lambdas.size == 0 or (lambdas <= 0).any():
        raise ValidationError("ridge lambda grid must be positive and nonempty")
    mse = np.zeros((lambdas.size, cv_plan.k))
    for fold in range(cv_plan.k):
        tr = _fold_training_mask(cv_plan, fold)
        va = ~tr
        if global_standardize:
            design_all = model.standardize(x, y)
            x_tr = design_all.x_std[tr]
            y_tr = design_all.y_centered[tr]
            x_va = design_all.x_std[va]
            y_off = design_all.y_mean
        else:
            tr_design = model.standardize(x[tr], y[tr])
            x_tr = tr_design.x_std
            y_tr = tr_design.y_centered
            x_va = (x[va] - tr_design.col_means) / tr_design.col_sds
            x_va[:, tr_design.constant_mask] = 0.0
            y_off = tr_design.y_mean
        view = _StandardizedView(x_tr, y_tr)
        for li, lam in enumerate(lambdas):
            beta = model.ridge_fit(view, lam)
            resid = y[va] - (y_off + x_va @ beta)
            mse[li, fold] = float(resid @ resid) / resid.size
    mean = mse.mean(axis=1)
    return float(lambdas[np.argmin(mean)]), mean


class _StandardizedView:
    """Minimal stand-in exposing the fields ridge_fit needs."""

    def __init__(self, x_std: np.ndarray, y_centered: np.ndarray):
        self.x_std = x_std
        self.y_centered = y_centered
