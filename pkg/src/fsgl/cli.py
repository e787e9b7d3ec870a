"""Command-line surface: fit, cv, simulate, heatmap.

Options can also come from a ``key = value`` config file (long option
names as keys); explicit command-line flags win.  Every run echoes its
fully resolved configuration into the output directory, and re-running
from that file reproduces the outputs byte for byte.

Exit codes: 0 success/converged, 2 solver hit max iterations, 3 input
validation failure, 4 internal error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import admm, fileio, model, sim, tuning
from .errors import InternalSolverError, StructureError, ValidationError
from .penalty import (
    GridSpec,
    GroupPartition,
    build_fusion_matrix,
    build_penalty_operator,
    read_mask,
)

EXIT_OK = 0
EXIT_MAX_ITER = 2
EXIT_VALIDATION = 3
EXIT_INTERNAL = 4

JOBS_ENV_VAR = "FSGL_JOBS"


# -- option schema -----------------------------------------------------------


class Opt:
    def __init__(self, name, parse, default=None, required=False, flag=False, help=""):
        self.name = name
        self.parse = parse
        self.default = default
        self.required = required
        self.flag = flag
        self.help = help


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"cannot parse boolean value {text!r}")


def parse_grid(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in str(text).lower().split("x"))
    except ValueError:
        raise ValidationError(f"cannot parse grid spec {text!r} (use e.g. 20x20)")
    return dims


def parse_lambda_grid(text: str) -> tuple[float, float, int]:
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValidationError(
            f"cannot parse lambda grid {text!r} (use xmin:xmax:count)"
        )
    try:
        return float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ValidationError(f"cannot parse lambda grid {text!r}")


def parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise ValidationError(f"cannot parse number list {text!r}")


_COMMON_DATA = [
    Opt("design", str, required=True, help="predictor matrix CSV (rows = subjects)"),
    Opt("response", str, required=True, help="response vector CSV"),
    Opt("grid", parse_grid, required=True, help="grid extents, e.g. 20x20"),
    Opt("mask", str, help="optional 0/1 mask file in cell-index order"),
    Opt("groups", str, required=True, help="group assignment CSV (index,group)"),
]
_SOLVER = [
    Opt("eps-abs", float, 1e-4),
    Opt("eps-rel", float, 1e-3),
    Opt("max-iter", int, 5000),
    Opt("rho0", float, 1.0),
    Opt("tau", float, 2.0),
    Opt("eta", float, 10.0),
    Opt("rho-period", int, 1),
]
_ADAPTIVE = [
    Opt("adaptive", _parse_bool, False, flag=True, help="ridge-initialized weights"),
    Opt("weight-cap", float, model.DEFAULT_WEIGHT_CAP),
]
_OPTIONS = {
    "fit": _COMMON_DATA
    + [
        Opt("lambda", float, help="overall level (with --alpha/--gamma)"),
        Opt("alpha", float),
        Opt("gamma", float),
        Opt("lambda1", float),
        Opt("lambda2", float),
        Opt("lambda3", float),
        Opt("lambda-grid", parse_lambda_grid, (-3.0, 3.0, 50), help="ridge CV grid"),
        Opt("folds", int, 5),
        Opt("seed", int, 0),
        Opt("stratified", _parse_bool, False, flag=True),
        Opt("out", str, required=True),
    ]
    + _ADAPTIVE
    + _SOLVER,
    "cv": _COMMON_DATA
    + [
        Opt("alphas", parse_float_list, sim.DEFAULT_ALPHAS),
        Opt("gammas", parse_float_list, sim.DEFAULT_GAMMAS),
        Opt("lambda-grid", parse_lambda_grid, (-3.0, 3.0, 50)),
        Opt("folds", int, 5),
        Opt("seed", int, 0),
        Opt("stratified", _parse_bool, False, flag=True),
        Opt("global-standardize", _parse_bool, False, flag=True),
        Opt("no-warm-starts", _parse_bool, False, flag=True),
        Opt("jobs", int),
        Opt("out", str, required=True),
    ]
    + _ADAPTIVE
    + _SOLVER,
    "simulate": [
        Opt("scenario", str, required=True, help="scenario id or 'all'"),
        Opt("replicates", int, 20),
        Opt("seed", int, 0),
        Opt("alphas", parse_float_list, sim.DEFAULT_ALPHAS),
        Opt("gammas", parse_float_list, sim.DEFAULT_GAMMAS),
        Opt("lambda-grid", parse_lambda_grid, (-3.0, 3.0, 50)),
        Opt("folds", int, 5),
        Opt("stratified", _parse_bool, False, flag=True),
        Opt("global-standardize", _parse_bool, False, flag=True),
        Opt("jobs", int),
        Opt("out", str, required=True),
    ]
    + _SOLVER,
    "heatmap": [
        Opt("coeffs", str, required=True, help="coefficients CSV"),
        Opt("grid", parse_grid, required=True),
        Opt("mask", str),
        Opt("column", str, "beta_orig"),
        Opt("slice", int, help="slice index for 3D grids"),
        Opt("png", _parse_bool, False, flag=True),
        Opt("out", str, required=True, help="output PGM path"),
    ],
}


def read_config_file(path) -> dict[str, str]:
    mapping: dict[str, str] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as err:
        raise ValidationError(f"cannot read config file {path}: {err}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def resolve_options(command: str, cli_values: dict, config_path: str | None) -> dict:
    """Merge CLI flags over config-file values over defaults."""
    schema = _OPTIONS[command]
    file_values = read_config_file(config_path) if config_path else {}
    known = {o.name for o in schema}
    for key in file_values:
        if key not in known and key != "command":
            raise ValidationError(f"unknown config key {key!r} for command {command}")
    resolved = {}
    for opt in schema:
        value = cli_values.get(opt.name.replace("-", "_"))
        if value is None and opt.name in file_values:
            value = opt.parse(file_values[opt.name])
        if value is None:
            value = opt.default
        if value is None and opt.required:
            raise ValidationError(f"missing required option --{opt.name}")
        resolved[opt.name] = value
    return resolved


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return fileio.fmt(value)
    if isinstance(value, (tuple, list)):
        if len(value) == 3 and isinstance(value[2], int) and isinstance(value[0], float):
            return f"{fileio.fmt(value[0])}:{fileio.fmt(value[1])}:{value[2]}"
        if all(isinstance(v, int) for v in value):
            return "x".join(str(v) for v in value)
        return ",".join(fileio.fmt(v) for v in value)
    return str(value)


def write_resolved_config(path, command: str, resolved: dict) -> None:
    lines = [f"command = {command}"]
    for key in sorted(resolved):
        if resolved[key] is None:
            continue
        lines.append(f"{key} = {_render_value(resolved[key])}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- shared loading ----------------------------------------------------------


def _admm_config(opts) -> admm.AdmmConfig:
    return admm.AdmmConfig(
        rho0=opts["rho0"],
        tau=opts["tau"],
        eta=opts["eta"],
        eps_abs=opts["eps-abs"],
        eps_rel=opts["eps-rel"],
        max_iter=opts["max-iter"],
        rho_update_period=opts["rho-period"],
    )


def _load_problem(opts):
    x = fileio.read_matrix_csv(opts["design"])
    y = fileio.read_vector_csv(opts["response"])
    mask = read_mask(opts["mask"]) if opts["mask"] else None
    grid = GridSpec(opts["grid"], mask=mask)
    groups = GroupPartition.from_csv(opts["groups"])
    if groups.p != grid.n_cells:
        raise ValidationError(
            f"group file covers {groups.p} coefficients but the grid has "
            f"{grid.n_cells} included cells"
        )
    if x.shape[1] != grid.n_cells:
        raise ValidationError(
            f"design has {x.shape[1]} columns but the grid has {grid.n_cells} cells"
        )
    if y.size != x.shape[0]:
        raise ValidationError(
            f"response length {y.size} does not match {x.shape[0]} design rows"
        )
    fusion = build_fusion_matrix(grid)
    penalty = build_penalty_operator(fusion, groups)
    return x, y, grid, fusion, groups, penalty


def _resolve_jobs(opts) -> int:
    if opts.get("jobs"):
        return max(1, opts["jobs"])
    env = os.environ.get(JOBS_ENV_VAR, "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"cannot parse {JOBS_ENV_VAR}={env!r}")
    return 1


def _adaptive_weights_for(opts, x, y, fusion, groups, out_dir):
    """Ridge-CV initialization: pick the ridge level, fit, form weights."""
    plan = tuning.make_folds(
        y, opts["folds"], stratified=opts["stratified"], seed=opts["seed"]
    )
    grid = tuning.lambda_grid(*opts["lambda-grid"])
    lambda_ridge, _ = tuning.ridge_cv(x, y, grid, plan)
    design = model.standardize(x, y)
    beta_ridge = model.ridge_fit(design, lambda_ridge)
    weights = model.adaptive_weights(
        beta_ridge, fusion, groups, cap=opts["weight-cap"]
    )
    fileio.write_weights_csv(out_dir / "weights.csv", weights, fusion.p, fusion.m)
    return weights, lambda_ridge


# -- commands ----------------------------------------------------------------


def cmd_fit(opts) -> int:
    explicit = [opts["lambda1"], opts["lambda2"], opts["lambda3"]]
    reparam = [opts["lambda"], opts["alpha"], opts["gamma"]]
    if any(v is not None for v in explicit):
        if any(v is not None for v in reparam):
            raise ValidationError(
                "give either --lambda/--alpha/--gamma or --lambda1/2/3, not both"
            )
        triple = [v if v is not None else 0.0 for v in explicit]
        tp = model.TuningPoint.from_lambdas(*triple)
    else:
        if any(v is None for v in reparam):
            raise ValidationError("need --lambda, --alpha and --gamma (or --lambda1/2/3)")
        tp = model.TuningPoint(opts["lambda"], opts["alpha"], opts["gamma"])

    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    x, y, grid, fusion, groups, penalty = _load_problem(opts)

    weights = None
    lambda_ridge = None
    if opts["adaptive"]:
        weights, lambda_ridge = _adaptive_weights_for(
            opts, x, y, fusion, groups, out_dir
        )

    config = _admm_config(opts)
    config.trace_objective = True
    design = model.standardize(x, y)
    result = model.fit(design, penalty, tp, config=config, weights=weights)

    fileio.write_coefficients_csv(
        out_dir / "coefficients.csv", result.beta_std, result.beta_orig
    )
    fileio.write_trace_csv(out_dir / "trace.csv", result.report.trace)
    lam1, lam2, lam3 = tp.lambdas
    fileio.write_json(
        out_dir / "fit.json",
        {
            "estimator": model.estimator_label(tp, adaptive=opts["adaptive"]),
            "lambda": tp.lam,
            "alpha": tp.alpha,
            "gamma": tp.gamma,
            "lambda1": lam1,
            "lambda2": lam2,
            "lambda3": lam3,
            "lambda_ridge": lambda_ridge,
            "adaptive": bool(opts["adaptive"]),
            "converged": result.report.converged,
            "iterations": result.report.iterations,
            "objective": result.report.objective,
            "support_size": int(result.support.size),
            "intercept": result.intercept_orig,
            "n": int(design.n),
            "p": int(design.p),
        },
    )
    write_resolved_config(out_dir / "resolved-config.txt", "fit", opts)
    return EXIT_OK if result.report.converged else EXIT_MAX_ITER


def cmd_cv(opts) -> int:
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    x, y, grid, fusion, groups, penalty = _load_problem(opts)

    weights = None
    if opts["adaptive"]:
        weights, _ = _adaptive_weights_for(opts, x, y, fusion, groups, out_dir)

    plan = tuning.make_folds(
        y, opts["folds"], stratified=opts["stratified"], seed=opts["seed"]
    )
    cells = [(a, g) for a in opts["alphas"] for g in opts["gammas"]]
    lambdas = tuning.lambda_grid(*opts["lambda-grid"])
    surface = tuning.cross_validate(
        x,
        y,
        penalty,
        cells,
        lambdas,
        plan,
        config=_admm_config(opts),
        weights=weights,
        global_standardize=opts["global-standardize"],
        warm_starts=not opts["no-warm-starts"],
        n_jobs=_resolve_jobs(opts),
    )
    alpha, gamma, lam = tuning.select_model(surface)
    ci = surface.alpha_gamma.index((alpha, gamma))
    li = int(np.flatnonzero(surface.lambdas == lam)[0])
    fileio.write_surface_csv(out_dir / "surface.csv", surface)
    fileio.write_surface_summary_csv(out_dir / "summary.csv", surface)
    fileio.write_json(
        out_dir / "selected.json",
        {
            "alpha": alpha,
            "gamma": gamma,
            "lambda": lam,
            "mean_cv_mse": float(surface.mean_mse[ci, li]),
            "estimator": model.estimator_label(
                model.TuningPoint(lam, alpha, gamma), adaptive=opts["adaptive"]
            ),
        },
    )
    write_resolved_config(out_dir / "resolved-config.txt", "cv", opts)
    return EXIT_OK


def cmd_simulate(opts) -> int:
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = list(sim.SCENARIO_IDS) if opts["scenario"] == "all" else [opts["scenario"]]
    cells = [(a, g) for a in opts["alphas"] for g in opts["gammas"]]
    for scenario_id in ids:
        scenario = sim.build_scenario(scenario_id, seed=opts["seed"])
        report = sim.run_experiment(
            scenario,
            n_replicates=opts["replicates"],
            alpha_gamma_grid=cells,
            lambda_grid_spec=opts["lambda-grid"],
            config=_admm_config(opts),
            seed=opts["seed"],
            k=opts["folds"],
            stratified=opts["stratified"],
            global_standardize=opts["global-standardize"],
            n_jobs=_resolve_jobs(opts),
        )
        sub = out_dir / scenario_id if len(ids) > 1 else out_dir
        sub.mkdir(parents=True, exist_ok=True)
        fileio.write_replicates_csv(sub / "replicates.csv", report)
        fileio.write_frequencies_csv(sub / "frequencies.csv", report)
        fileio.write_modal_summary_csv(sub / "table_summary.csv", report)
        fileio.write_bias_variance_csv(sub / "bias_variance.csv", report)
        fileio.write_vector_csv(sub / "beta_true.csv", scenario.beta_true)
        scenario.groups.to_csv(sub / "groups.csv")
        write_resolved_config(sub / "resolved-config.txt", "simulate", opts)
    return EXIT_OK


def cmd_heatmap(opts) -> int:
    values = fileio.read_coefficients_csv(opts["coeffs"], column=opts["column"])
    mask = read_mask(opts["mask"]) if opts["mask"] else None
    grid = GridSpec(opts["grid"], mask=mask)
    if values.size != grid.n_cells:
        raise ValidationError(
            f"{values.size} coefficients for a grid with {grid.n_cells} included cells"
        )
    full = np.zeros(grid.n_total)
    if mask is not None:
        full[mask] = values
    else:
        full = values

    dims = grid.dims
    if len(dims) == 1:
        image = full.reshape(1, dims[0])
    elif len(dims) == 2:
        image = full.reshape(dims)
    else:
        if opts["slice"] is None:
            raise ValidationError(
                "3D grids render one slice at a time; pass --slice k"
            )
        k = opts["slice"]
        if not 0 <= k < dims[2]:
            raise ValidationError(f"slice {k} out of range for {dims[2]} slices")
        per = dims[0] * dims[1]
        image = full[k * per : (k + 1) * per].reshape(dims[0], dims[1])

    levels_flat, vmin, vmax = fileio.coefficient_levels(image.ravel())
    levels = levels_flat.reshape(image.shape)
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_pgm(out, levels)
    fileio.write_scale_csv(Path(str(out) + ".scale.csv"), vmin, vmax)
    if opts["png"]:
        fileio.write_png(out.with_suffix(".png"), levels)
    write_resolved_config(Path(str(out) + ".config.txt"), "heatmap", opts)
    return EXIT_OK


_COMMANDS = {
    "fit": cmd_fit,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "heatmap": cmd_heatmap,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsgl",
        description="Fused sparse group lasso regression toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, schema in _OPTIONS.items():
        cp = sub.add_parser(command)
        for opt in schema:
            if opt.flag:
                cp.add_argument(
                    f"--{opt.name}", action="store_true", default=None, help=opt.help
                )
            else:
                cp.add_argument(
                    f"--{opt.name}", type=opt.parse, default=None, help=opt.help
                )
        cp.add_argument("--config", type=str, default=None, help="key = value file")
    return parser


def _fuse_negative_values(argv: list[str]) -> list[str]:
    """Join ``--opt -3:3:50`` into ``--opt=-3:3:50`` so argparse does not
    mistake a leading-minus value for a flag."""
    if not argv:
        return argv
    command = argv[0]
    value_opts = {
        f"--{o.name}" for o in _OPTIONS.get(command, []) if not o.flag
    } | {"--config"}
    fused = [command]
    i = 1
    while i < len(argv):
        tok = argv[i]
        nxt = argv[i + 1] if i + 1 < len(argv) else None
        if (
            tok in value_opts
            and nxt is not None
            and len(nxt) > 1
            and nxt[0] == "-"
            and (nxt[1].isdigit() or nxt[1] == ".")
        ):
            fused.append(f"{tok}={nxt}")
            i += 2
        else:
            fused.append(tok)
            i += 1
    return fused


def main(argv=None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    argv = _fuse_negative_values([str(a) for a in argv])
    try:
        ns = parser.parse_args(argv)
        opts = resolve_options(ns.command, vars(ns), ns.config)
        return _COMMANDS[ns.command](opts)
    except (ValidationError, StructureError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except InternalSolverError as err:
        print(f"internal error: {err}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
