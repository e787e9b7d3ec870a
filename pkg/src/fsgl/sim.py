"""Synthetic experiment harness over 20x20 image predictors.

Nine true-coefficient scenarios combine three group layouts (aggregated,
partially aggregated, distributed), three sparsity levels of the active
pixels, and a misspecified partition variant.  Replicates redraw the data
but share the scenario's coefficient pattern and a common bias-variance
test matrix.

Randomness uses numpy's PCG64 bit generator.  Streams are derived from the
experiment seed with fixed tags: ``SeedSequence([seed, 0])`` for the
scenario's sparsity draw, ``SeedSequence([seed, 1, r])`` for the data of
replicate r, ``SeedSequence([seed, 2])`` for the shared bias-variance
matrix, and ``SeedSequence([seed, 3, r])`` for fold assignment, so serial
and parallel runs produce identical output.  Within a dataset the draw
order is X_train, eps_train, X_test, eps_test, X_bv (row-major,
``Generator.standard_normal``).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import model, tuning
from .admm import AdmmConfig, LinearSolver
from .errors import ValidationError
from .penalty import GridSpec, GroupPartition, build_fusion_matrix, build_penalty_operator

GRID_DIMS = (20, 20)
N_GROUPS = 16
GROUP_SIZE = 25
COEF_VALUE = 3.0
NOISE_SD = 2.0  # noise variance 4

SCENARIO_IDS = ("1A", "2B", "3C", "4A", "5B", "6C", "7B", "8B", "9B")
_SCENARIO_SPEC = {
    "1A": ("aggregated", 0, False),
    "2B": ("partial", 0, False),
    "3C": ("distributed", 0, False),
    "4A": ("aggregated", 40, False),
    "5B": ("partial", 40, False),
    "6C": ("distributed", 40, False),
    "7B": ("partial", 80, False),
    "8B": ("partial", 0, True),
    "9B": ("partial", 40, True),
}

DEFAULT_ALPHAS = (0.0, 0.2, 0.5, 0.8, 1.0)
DEFAULT_GAMMAS = (0.0, 0.2, 0.5, 0.8, 1.0)
DEFAULT_LAMBDA_GRID = (-3.0, 3.0, 50)


@dataclass(frozen=True)
class Scenario:
    id: str
    group_layout: str
    beta_true: np.ndarray
    groups: GroupPartition
    sparsity: int  # percent of active-group coefficients zeroed
    misspecified: bool
    grid_dims: tuple[int, ...] = GRID_DIMS

    @property
    def p(self) -> int:
        return self.beta_true.size


@dataclass(frozen=True)
class SimDataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    x_bv: np.ndarray
    seed: int


def _aggregated_layout() -> np.ndarray:
    """16 solid 5x5 blocks tiling the grid."""
    r, c = np.indices(GRID_DIMS)
    return (1 + 4 * (r // 5) + (c // 5)).ravel()


def _distributed_layout() -> np.ndarray:
    """A 4x4 label tile repeated, so same-group pixels never share an edge."""
    r, c = np.indices(GRID_DIMS)
    return (1 + 4 * (r % 4) + (c % 4)).ravel()


def _partial_pieces() -> list[tuple[int, int, int, int, int]]:
    """(group, row, col, height, width) for every piece of the partial layout.

    Each group owns one 3x3 square, three 2x2 squares, and two 1x2
    rectangles.  The 3x3 squares pack a 12x12 corner; 2x2 squares fill the
    two adjacent strips; dominoes fill the remaining 8x8 corner.  Squares
    and dominoes are assigned to groups round-robin so that the pieces of
    a group are spread across the image.
    """
    pieces = []
    for i in range(4):
        for j in range(4):
            pieces.append((1 + 4 * i + j, 3 * i, 3 * j, 3, 3))
    q = 0
    for i in range(6):
        for j in range(4):
            pieces.append((1 + q % 16, 2 * i, 12 + 2 * j, 2, 2))
            q += 1
    for i in range(4):
        for j in range(6):
            pieces.append((1 + q % 16, 12 + 2 * i, 2 * j, 2, 2))
            q += 1
    d = 0
    for i in range(8):
        for j in range(4):
            pieces.append((1 + d % 16, 12 + i, 12 + 2 * j, 1, 2))
            d += 1
    return pieces


def _paint(pieces) -> np.ndarray:
    img = np.zeros(GRID_DIMS, dtype=int)
    for g, r, c, h, w in pieces:
        img[r : r + h, c : c + w] = g
    return img.ravel()


def _partial_layout() -> np.ndarray:
    return _paint(_partial_pieces())


# Piece swaps that relabel group 1's pieces across four other groups while
# keeping every group's shape inventory and size intact.  Each entry pairs
# a group-1 piece with the same-shaped piece of the named partner group.
_MISSPEC_SWAPS = (
    ((0, 0, 3, 3), (0, 3, 3, 3), 2),      # 3x3 squares
    ((0, 12, 2, 2), (0, 16, 2, 2), 3),    # 2x2 squares
    ((8, 12, 2, 2), (8, 18, 2, 2), 4),
    ((14, 4, 2, 2), (16, 0, 2, 2), 5),
    ((12, 12, 1, 2), (12, 14, 1, 2), 2),  # 1x2 rectangles
    ((16, 12, 1, 2), (16, 16, 1, 2), 3),
)


def _misspecified_layout() -> np.ndarray:
    img = _partial_layout().reshape(GRID_DIMS).copy()
    for (r1, c1, h, w), (r2, c2, _, _), partner in _MISSPEC_SWAPS:
        assert (img[r1 : r1 + h, c1 : c1 + w] == 1).all()
        assert (img[r2 : r2 + h, c2 : c2 + w] == partner).all()
        img[r1 : r1 + h, c1 : c1 + w] = partner
        img[r2 : r2 + h, c2 : c2 + w] = 1
    return img.ravel()


_LAYOUT_BUILDERS = {
    "aggregated": _aggregated_layout,
    "partial": _partial_layout,
    "distributed": _distributed_layout,
}


def build_scenario(scenario_id: str, seed: int = 0) -> Scenario:
    """Construct a scenario's coefficient pattern and group partition.

    The active pixels are group 1's cells (for the misspecified variants,
    the same pixel set as scenario 2B, relabeled across four groups).
    Sparse variants zero a seeded draw without replacement from the active
    pixels.
    """
    if scenario_id not in _SCENARIO_SPEC:
        raise ValidationError(
            f"unknown scenario {scenario_id!r}; choose from {SCENARIO_IDS}"
        )
    layout, sparsity, misspecified = _SCENARIO_SPEC[scenario_id]
    base_assignment = _LAYOUT_BUILDERS[layout]()
    active = np.flatnonzero(base_assignment == 1)
    assignment = _misspecified_layout() if misspecified else base_assignment

    beta = np.zeros(base_assignment.size)
    beta[active] = COEF_VALUE
    n_zero = round(sparsity / 100 * active.size)
    if n_zero:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        beta[rng.choice(active, size=n_zero, replace=False)] = 0.0
    return Scenario(
        id=scenario_id,
        group_layout=layout,
        beta_true=beta,
        groups=GroupPartition(assignment),
        sparsity=sparsity,
        misspecified=misspecified,
    )


def generate_dataset(
    scenario: Scenario,
    seed: int,
    n_train: int = 50,
    n_test: int = 50,
    n_bv: int = 100,
    x_bv: np.ndarray | None = None,
) -> SimDataset:
    """Draw one replicate: iid standard normal predictors, noise variance 4.

    ``x_bv`` can be supplied to share one bias-variance test matrix across
    replicates; it is drawn last, so earlier draws are unaffected.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    p = scenario.p
    x_train = rng.standard_normal((n_train, p))
    y_train = x_train @ scenario.beta_true + NOISE_SD * rng.standard_normal(n_train)
    x_test = rng.standard_normal((n_test, p))
    y_test = x_test @ scenario.beta_true + NOISE_SD * rng.standard_normal(n_test)
    if x_bv is None:
        x_bv = rng.standard_normal((n_bv, p))
    return SimDataset(
        x_train=x_train,
        y_train=y_train,
        x_test=x_test,
        y_test=y_test,
        x_bv=x_bv,
        seed=seed,
    )


@dataclass
class ExperimentReport:
    """Per-replicate tuning outcomes and cross-replicate aggregates.

    Metric arrays are (replicates, cells); NaN marks a cell that failed in
    that replicate.  ``freq_*`` count how often each cell attained the
    lowest value of the corresponding criterion.
    """

    scenario: Scenario
    alpha_gamma: list[tuple[float, float]]
    lambdas: np.ndarray
    n_replicates: int
    seed: int
    lambda_opt: np.ndarray
    cv_mse: np.ndarray
    mse_beta: np.ndarray
    mse_pred: np.ndarray
    freq_cve: np.ndarray
    freq_mse_beta: np.ndarray
    freq_mse_pred: np.ndarray
    bv_squared_bias: np.ndarray
    bv_variance: np.ndarray

    def modal_cell(self, metric: str) -> tuple[float, float]:
        """Cell most frequently attaining the lowest value of a metric."""
        freq = {
            "cve": self.freq_cve,
            "mse_beta": self.freq_mse_beta,
            "mse_pred": self.freq_mse_pred,
        }[metric]
        return self.alpha_gamma[_argbest(-freq.astype(float), self.alpha_gamma)]

    def cv_vs_test_agreement(self) -> int:
        """Replicates where the lowest-CVE cell equals the lowest-MSE(y_test) cell."""
        count = 0
        for r in range(self.n_replicates):
            if np.isnan(self.cv_mse[r]).all() or np.isnan(self.mse_pred[r]).all():
                continue
            if _argbest(self.cv_mse[r], self.alpha_gamma) == _argbest(
                self.mse_pred[r], self.alpha_gamma
            ):
                count += 1
        return count

    def replicate_rows(self):
        """Rows (replicate, alpha, gamma, lambda_opt, cv_mse, mse_beta, mse_pred)."""
        for r in range(self.n_replicates):
            for ci, (a, g) in enumerate(self.alpha_gamma):
                yield (
                    r,
                    a,
                    g,
                    float(self.lambda_opt[r, ci]),
                    float(self.cv_mse[r, ci]),
                    float(self.mse_beta[r, ci]),
                    float(self.mse_pred[r, ci]),
                )

    def frequency_rows(self):
        for ci, (a, g) in enumerate(self.alpha_gamma):
            yield (
                a,
                g,
                int(self.freq_cve[ci]),
                int(self.freq_mse_beta[ci]),
                int(self.freq_mse_pred[ci]),
            )

    def bias_variance_rows(self):
        for ci, (a, g) in enumerate(self.alpha_gamma):
            yield a, g, float(self.bv_squared_bias[ci]), float(self.bv_variance[ci])


def _argbest(values: np.ndarray, cells: list[tuple[float, float]]) -> int:
    """Index of the smallest value; ties prefer larger gamma, then smaller alpha."""
    values = np.asarray(values, dtype=float)
    best = None
    best_key = None
    for ci, (a, g) in enumerate(cells):
        v = values[ci]
        if np.isnan(v):
            continue
        key = (v, -g, a)
        if best_key is None or key < best_key:
            best_key = key
            best = ci
    if best is None:
        raise ValidationError("no finite values to compare")
    return best


def _derived_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1, np.uint64)[0])


def _replicate_task(args):
    (
        scenario,
        penalty,
        cells,
        lambdas,
        config,
        seed,
        rep,
        k,
        stratified,
        global_standardize,
        warm_starts,
        x_bv,
    ) = args
    ds = generate_dataset(scenario, _derived_seed(seed, 1, rep), x_bv=x_bv)
    plan = tuning.make_folds(
        ds.y_train, k, stratified=stratified, seed=_derived_seed(seed, 3, rep)
    )
    surface = tuning.cross_validate(
        ds.x_train,
        ds.y_train,
        penalty,
        cells,
        lambdas,
        plan,
        config=config,
        global_standardize=global_standardize,
        warm_starts=warm_starts,
    )
    design = model.standardize(ds.x_train, ds.y_train)
    lin = LinearSolver(design.x_std, penalty)
    n_cells = len(cells)
    lam_opt = np.full(n_cells, np.nan)
    cve = np.full(n_cells, np.nan)
    msb = np.full(n_cells, np.nan)
    msp = np.full(n_cells, np.nan)
    bv_pred = np.full((n_cells, ds.x_bv.shape[0]), np.nan)
    for ci, (a, g) in enumerate(cells):
        li = surface.selected_idx[ci]
        if li < 0:
            continue
        lam = float(surface.lambdas[li])
        fit_res = model.fit(
            design,
            penalty,
            model.TuningPoint(lam, a, g),
            config=config,
            linear_solver=lin,
        )
        if not fit_res.report.converged:
            continue
        lam_opt[ci] = lam
        cve[ci] = surface.mean_mse[ci, li]
        msb[ci] = model.mse_beta(fit_res.beta_orig, scenario.beta_true)
        msp[ci] = model.mse_pred(
            model.predict(fit_res, ds.x_test, design), ds.y_test
        )
        bv_pred[ci] = model.predict(fit_res, ds.x_bv, design)
    return lam_opt, cve, msb, msp, bv_pred


def run_experiment(
    scenario: Scenario,
    n_replicates: int = 20,
    alpha_gamma_grid: list[tuple[float, float]] | None = None,
    lambda_grid_spec: tuple[float, float, int] = DEFAULT_LAMBDA_GRID,
    config: AdmmConfig | None = None,
    seed: int = 0,
    k: int = 5,
    stratified: bool = False,
    global_standardize: bool = False,
    warm_starts: bool = True,
    n_jobs: int = 1,
    n_bv: int = 100,
) -> ExperimentReport:
    """CV-tune, refit, and score every (alpha, gamma) cell per replicate.

    Each replicate selects lambda per cell by k-fold CV, refits on the full
    training sample, and records coefficient and test-prediction errors
    plus predictions on a bias-variance test matrix shared by all
    replicates.  Replicates are independent tasks with derived seeds.
    """
    if n_replicates < 1:
        raise ValidationError("need at least one replicate")
    cells = (
        list(alpha_gamma_grid)
        if alpha_gamma_grid is not None
        else [(a, g) for a in DEFAULT_ALPHAS for g in DEFAULT_GAMMAS]
    )
    lambdas = tuning.lambda_grid(*lambda_grid_spec)
    fusion = build_fusion_matrix(GridSpec(scenario.grid_dims))
    penalty = build_penalty_operator(fusion, scenario.groups)
    bv_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    x_bv = bv_rng.standard_normal((n_bv, scenario.p))

    tasks = [
        (
            scenario,
            penalty,
            cells,
            lambdas,
            config,
            seed,
            rep,
            k,
            stratified,
            global_standardize,
            warm_starts,
            x_bv,
        )
        for rep in range(n_replicates)
    ]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_replicate_task, tasks))
    else:
        results = [_replicate_task(t) for t in tasks]

    n_cells = len(cells)
    lam_opt = np.vstack([r[0] for r in results])
    cve = np.vstack([r[1] for r in results])
    msb = np.vstack([r[2] for r in results])
    msp = np.vstack([r[3] for r in results])
    bv_pred = np.stack([r[4] for r in results])  # (R, cells, n_bv)

    freq_cve = np.zeros(n_cells, dtype=int)
    freq_msb = np.zeros(n_cells, dtype=int)
    freq_msp = np.zeros(n_cells, dtype=int)
    for r in range(n_replicates):
        if np.isnan(cve[r]).all():
            continue  # replicate excluded only if every cell failed
        freq_cve[_argbest(cve[r], cells)] += 1
        freq_msb[_argbest(msb[r], cells)] += 1
        freq_msp[_argbest(msp[r], cells)] += 1

    mean_fn = x_bv @ scenario.beta_true
    bv_bias = np.full(n_cells, np.nan)
    bv_var = np.full(n_cells, np.nan)
    for ci in range(n_cells):
        ok = ~np.isnan(bv_pred[:, ci, :]).any(axis=1)
        if ok.sum() >= 2:
            sb, var = model.bias_variance_decompose(bv_pred[ok, ci, :], mean_fn)
            bv_bias[ci], bv_var[ci] = sb, var

    return ExperimentReport(
        scenario=scenario,
        alpha_gamma=cells,
        lambdas=lambdas,
        n_replicates=n_replicates,
        seed=seed,
        lambda_opt=lam_opt,
        cv_mse=cve,
        mse_beta=msb,
        mse_pred=msp,
        freq_cve=freq_cve,
        freq_mse_beta=freq_msb,
        freq_mse_pred=freq_msp,
        bv_squared_bias=bv_bias,
        bv_variance=bv_var,
    )
