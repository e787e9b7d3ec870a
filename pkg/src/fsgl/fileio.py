"""CSV, JSON, and image emission.

All floating point output uses 17-significant-digit formatting so that
written values re-ingest bit-exactly.  Matrices interchange as headerless
numeric CSV, row-major.
"""

from __future__ import annotations

import csv
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ValidationError


def fmt(x) -> str:
    """Round-trip-safe decimal rendering of a float."""
    return format(float(x), ".17g")


def read_matrix_csv(path) -> np.ndarray:
    """Headerless numeric CSV -> 2D array (a single column stays 2D)."""
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except ValueError as err:
        raise ValidationError(f"malformed numeric CSV {path}: {err}") from None
    if arr.size == 0:
        raise ValidationError(f"empty numeric CSV: {path}")
    return arr


def read_vector_csv(path) -> np.ndarray:
    arr = read_matrix_csv(path)
    if arr.shape[1] != 1:
        raise ValidationError(f"{path} should contain a single column")
    return arr[:, 0]


def write_matrix_csv(path, arr) -> None:
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    with open(path, "w", newline="") as fh:
        for row in arr:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_vector_csv(path, vec) -> None:
    with open(path, "w", newline="") as fh:
        for v in np.asarray(vec, dtype=float).ravel():
            fh.write(fmt(v) + "\n")


def write_coefficients_csv(path, beta_std, beta_orig) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "beta_std", "beta_orig"])
        for j, (bs, bo) in enumerate(zip(beta_std, beta_orig)):
            writer.writerow([j, fmt(bs), fmt(bo)])


def read_coefficients_csv(path, column: str = "beta_orig") -> np.ndarray:
    """Read a coefficient vector from a fit output (or a plain one-column CSV)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValidationError(f"empty coefficients file: {path}")
    if rows[0][0].strip().lower() == "index":
        names = [c.strip().lower() for c in rows[0]]
        if column not in names:
            raise ValidationError(f"column {column!r} not in {path}")
        ci = names.index(column)
        body = rows[1:]
    elif len(rows[0]) == 1:
        ci, body = 0, rows
    else:
        raise ValidationError(
            f"{path}: expected an index,beta_std,beta_orig file or one column"
        )
    try:
        return np.array([float(r[ci]) for r in body])
    except (ValueError, IndexError) as err:
        raise ValidationError(f"malformed coefficients file {path}: {err}") from None


def write_trace_csv(path, trace) -> None:
    """Residual trace rows: iter,r_norm,s_norm,eps_pri,eps_dual,rho,objective."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iter", "r_norm", "s_norm", "eps_pri", "eps_dual", "rho", "objective"]
        )
        for i in range(trace.r_norm.size):
            writer.writerow(
                [
                    i + 1,
                    fmt(trace.r_norm[i]),
                    fmt(trace.s_norm[i]),
                    fmt(trace.eps_pri[i]),
                    fmt(trace.eps_dual[i]),
                    fmt(trace.rho[i]),
                    fmt(trace.objective[i]),
                ]
            )


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_surface_csv(path, surface) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "gamma", "lambda", "fold", "mse"])
        for a, g, lam, fold, mse in surface.fold_rows():
            writer.writerow([fmt(a), fmt(g), fmt(lam), fold, fmt(mse)])


def write_surface_summary_csv(path, surface) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "gamma", "lambda_opt", "mean_cv_mse"])
        for a, g, lam, mse in surface.summary_rows():
            writer.writerow([fmt(a), fmt(g), fmt(lam), fmt(mse)])


def write_replicates_csv(path, report) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["replicate", "alpha", "gamma", "lambda_opt", "cv_mse", "mse_beta", "mse_pred"]
        )
        for rep, a, g, lam, cve, msb, msp in report.replicate_rows():
            writer.writerow([rep, fmt(a), fmt(g), fmt(lam), fmt(cve), fmt(msb), fmt(msp)])


def write_frequencies_csv(path, report) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "gamma", "freq_cve", "freq_mse_beta", "freq_mse_pred"])
        for a, g, fc, fb, fp in report.frequency_rows():
            writer.writerow([fmt(a), fmt(g), fc, fb, fp])


def write_modal_summary_csv(path, report) -> None:
    """One row per scenario in the style of the optimal-cell table."""
    cve = report.modal_cell("cve")
    msb = report.modal_cell("mse_beta")
    msp = report.modal_cell("mse_pred")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "scenario",
                "cve_alpha",
                "cve_gamma",
                "mse_beta_alpha",
                "mse_beta_gamma",
                "mse_pred_alpha",
                "mse_pred_gamma",
            ]
        )
        writer.writerow(
            [report.scenario.id, fmt(cve[0]), fmt(cve[1]), fmt(msb[0]), fmt(msb[1]), fmt(msp[0]), fmt(msp[1])]
        )


def write_bias_variance_csv(path, report) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "gamma", "squared_bias", "variance"])
        for a, g, sb, var in report.bias_variance_rows():
            writer.writerow([fmt(a), fmt(g), fmt(sb), fmt(var)])


def write_weights_csv(path, weights, p: int, m: int) -> None:
    """Block weights with their block kind (lasso / fusion / group)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block", "kind", "weight"])
        for j, w in enumerate(weights):
            kind = "lasso" if j < p else "fusion" if j < p + m else "group"
            writer.writerow([j, kind, fmt(w)])


# -- image emission ----------------------------------------------------------


def coefficient_levels(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Map values to 0..255 on a symmetric diverging scale around zero."""
    values = np.asarray(values, dtype=float)
    vmax = float(np.max(np.abs(values))) if values.size else 0.0
    if vmax == 0.0:
        vmax = 1.0
    vmin = -vmax
    levels = np.rint((values - vmin) / (vmax - vmin) * 255.0).astype(int)
    return np.clip(levels, 0, 255), vmin, vmax


def write_pgm(path, levels: np.ndarray) -> None:
    """Plain-text (P2) grayscale image; deterministic byte-for-byte."""
    h, w = levels.shape
    with open(path, "w", newline="\n") as fh:
        fh.write(f"P2\n{w} {h}\n255\n")
        for row in levels:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def write_png(path, levels: np.ndarray) -> None:
    """Minimal 8-bit grayscale PNG writer (no external imaging dependency)."""
    h, w = levels.shape
    raw = b"".join(b"\x00" + bytes(row.astype(np.uint8)) for row in levels)

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (
            struct.pack(">I", len(payload))
            + tag
            + payload
            + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    blob = (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )
    Path(path).write_bytes(blob)


def write_scale_csv(path, vmin: float, vmax: float, n_levels: int = 256) -> None:
    """Sidecar mapping from gray level to coefficient value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "value"])
        for level in range(n_levels):
            value = vmin + level / (n_levels - 1) * (vmax - vmin)
            writer.writerow([level, fmt(value)])
