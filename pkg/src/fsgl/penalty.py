"""Fusion structure, group partition, and the stacked penalty operator.

Grid cells are linearized so that axis 2 varies fastest, then axis 1, then
axis 3: ``index = x2 + d2*x1 + d1*d2*x3``.  For a 2D image with ``dims =
(rows, cols)`` this is the usual row-major flattening; a 3D volume is a
stack of such row-major slices.  Mask files and group assignment files use
this cell order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import prod

import numpy as np
import scipy.sparse as sp

from .errors import StructureError, ValidationError


@dataclass(frozen=True)
class GridSpec:
    """A 1-, 2-, or 3-axis rectangular grid with an optional inclusion mask.

    Parameters
    ----------
    dims : tuple of int
        Positive extents, one per axis (up to three).
    mask : array of bool, optional
        Length ``prod(dims)`` in cell-index order; True marks included
        cells.  At least one cell must be included.
    """

    dims: tuple[int, ...]
    mask: np.ndarray | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in np.atleast_1d(np.asarray(self.dims, dtype=int)))
        if not 1 <= len(dims) <= 3:
            raise StructureError(f"grid must have 1 to 3 axes, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise StructureError(f"grid extents must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)
        if self.mask is not None:
            mask = np.asarray(self.mask).ravel().astype(bool)
            if mask.size != prod(dims):
                raise StructureError(
                    f"mask length {mask.size} does not match grid size {prod(dims)}"
                )
            if not mask.any():
                raise StructureError("mask excludes every cell")
            object.__setattr__(self, "mask", mask)

    @property
    def n_total(self) -> int:
        """Number of cells in the full grid, ignoring the mask."""
        return prod(self.dims)

    @property
    def n_cells(self) -> int:
        """Number of included cells."""
        return int(self.mask.sum()) if self.mask is not None else self.n_total


def _index_volume(dims: tuple[int, ...]) -> np.ndarray:
    """Linear cell index for every grid position, shape (d1, d2, d3)."""
    d1, d2, d3 = (dims + (1, 1))[:3]
    x1 = np.arange(d1)[:, None, None]
    x2 = np.arange(d2)[None, :, None]
    x3 = np.arange(d3)[None, None, :]
    return x2 + d2 * x1 + d1 * d2 * x3


def _axis_pairs(idx: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Low/high linear indices of adjacent pairs along one axis, sorted by low."""
    sl_low = [slice(None)] * 3
    sl_high = [slice(None)] * 3
    sl_low[axis] = slice(None, -1)
    sl_high[axis] = slice(1, None)
    low = idx[tuple(sl_low)].ravel()
    high = idx[tuple(sl_high)].ravel()
    order = np.argsort(low)
    return low[order], high[order]


@dataclass(frozen=True)
class FusionStructure:
    """Sparse incidence matrix over face-adjacent grid cells.

    Each row has a +1 at the lower cell index and a -1 at the higher one.
    Rows are ordered axis by axis (axis 1 first), and within an axis by
    ascending lower cell index.
    """

    d_matrix: sp.csr_matrix
    grid: GridSpec | None = None

    def __post_init__(self):
        d = sp.csr_matrix(self.d_matrix)
        d.sum_duplicates()
        d.sort_indices()
        nnz_per_row = np.diff(d.indptr)
        if d.shape[0] and not (nnz_per_row == 2).all():
            raise StructureError("every fusion row must have exactly two nonzeros")
        if d.nnz:
            first, second = d.data[0::2], d.data[1::2]
            if not ((np.abs(first) == 1.0) & (first + second == 0.0)).all():
                raise StructureError("fusion rows must contain one +1 and one -1")
        pairs = d.indices.reshape(-1, 2) if d.nnz else np.empty((0, 2), int)
        if len(pairs) != len(np.unique(pairs, axis=0)):
            raise StructureError("duplicate adjacency rows in fusion matrix")
        object.__setattr__(self, "d_matrix", d)

    @property
    def m(self) -> int:
        return self.d_matrix.shape[0]

    @property
    def p(self) -> int:
        return self.d_matrix.shape[1]

    @property
    def signed_columns(self) -> tuple[np.ndarray, np.ndarray]:
        """(positive, negative) coefficient index per row, so Dv = v[pos] - v[neg]."""
        if self.m == 0:
            return np.empty(0, int), np.empty(0, int)
        first_col = self.d_matrix.indices[0::2]
        second_col = self.d_matrix.indices[1::2]
        first_is_pos = self.d_matrix.data[0::2] == 1.0
        pos = np.where(first_is_pos, first_col, second_col)
        neg = np.where(first_is_pos, second_col, first_col)
        return pos, neg


def build_fusion_matrix(grid: GridSpec) -> FusionStructure:
    """Enumerate all face-adjacent in-mask cell pairs as difference rows.

    Coefficients are indexed over included cells only; adjacencies with an
    excluded neighbor generate no row.
    """
    idx = _index_volume(grid.dims)
    lows, highs = [], []
    for axis in range(len(grid.dims)):
        lo, hi = _axis_pairs(idx, axis)
        lows.append(lo)
        highs.append(hi)
    low = np.concatenate(lows) if lows else np.empty(0, int)
    high = np.concatenate(highs) if highs else np.empty(0, int)

    p = grid.n_total
    if grid.mask is not None:
        keep = grid.mask[low] & grid.mask[high]
        low, high = low[keep], high[keep]
        compress = np.cumsum(grid.mask) - 1
        low, high = compress[low], compress[high]
        p = grid.n_cells

    m = low.size
    data = np.tile([1.0, -1.0], m)
    indices = np.column_stack([low, high]).ravel()
    indptr = np.arange(0, 2 * m + 1, 2)
    d = sp.csr_matrix((data, indices, indptr), shape=(m, p))
    return FusionStructure(d_matrix=d, grid=grid)


def adjacency_count(grid: GridSpec) -> int:
    """Number of face-adjacent in-mask pairs, without materializing D."""
    if grid.mask is None:
        dims = grid.dims
        return sum(
            (dims[a] - 1) * prod(dims[:a] + dims[a + 1 :]) for a in range(len(dims))
        )
    d1, d2, d3 = (grid.dims + (1, 1))[:3]
    vol = grid.mask[_index_volume(grid.dims)].reshape(d1, d2, d3)
    count = 0
    for axis in range(len(grid.dims)):
        sl_low = [slice(None)] * 3
        sl_high = [slice(None)] * 3
        sl_low[axis] = slice(None, -1)
        sl_high[axis] = slice(1, None)
        count += int((vol[tuple(sl_low)] & vol[tuple(sl_high)]).sum())
    return count


@dataclass(frozen=True)
class GroupPartition:
    """Assignment of each coefficient to exactly one group.

    ``assignment`` has length p with group ids in {1..G}; every id in that
    range must be used (no gaps, no empty groups).
    """

    assignment: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=int).ravel()
        if a.size == 0:
            raise StructureError("empty group assignment")
        if a.min() < 1:
            raise StructureError("group ids must be positive integers")
        counts = np.bincount(a)[1:]
        if (counts == 0).any():
            missing = np.flatnonzero(counts == 0) + 1
            raise StructureError(f"empty group id(s): {missing.tolist()}")
        object.__setattr__(self, "assignment", a)

    @property
    def p(self) -> int:
        return self.assignment.size

    @property
    def n_groups(self) -> int:
        return int(self.assignment.max())

    @property
    def sizes(self) -> np.ndarray:
        """Members per group, in group-id order."""
        return np.bincount(self.assignment)[1:]

    def members(self, group_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == group_id)

    @classmethod
    def single_group(cls, p: int) -> "GroupPartition":
        return cls(np.ones(p, dtype=int))

    @classmethod
    def from_csv(cls, path) -> "GroupPartition":
        """Read an ``index,group`` CSV (0-based index, 1-based group id)."""
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.reader(fh):
                if not rec or not rec[0].strip():
                    continue
                if rec[0].strip().lower() == "index":
                    continue
                if len(rec) < 2:
                    raise ValidationError(f"group file row needs two columns: {rec}")
                try:
                    rows.append((int(rec[0]), int(rec[1])))
                except ValueError as err:
                    raise ValidationError(f"bad group file row {rec}: {err}") from None
        if not rows:
            raise ValidationError("group file contains no assignments")
        idx = np.array([r[0] for r in rows])
        gid = np.array([r[1] for r in rows])
        p = idx.max() + 1
        if len(np.unique(idx)) != p or idx.min() != 0 or len(rows) != p:
            raise ValidationError("group file must list every index 0..p-1 exactly once")
        assignment = np.zeros(p, dtype=int)
        assignment[idx] = gid
        return cls(assignment)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "group"])
            for j, g in enumerate(self.assignment):
                writer.writerow([j, int(g)])


def read_mask(path) -> np.ndarray:
    """Read a 0/1 mask (flat text or CSV) in cell-index order."""
    tokens = []
    with open(path) as fh:
        for line in fh:
            tokens.extend(t for t in line.replace(",", " ").split() if t)
    try:
        values = np.array([int(float(t)) for t in tokens])
    except ValueError as err:
        raise ValidationError(f"bad mask value: {err}") from None
    if not np.isin(values, (0, 1)).all():
        raise ValidationError("mask entries must be 0 or 1")
    return values.astype(bool)


class PenaltyOperator:
    """Stacked constraint operator K with per-block classes and weights.

    Blocks are ordered: p singleton rows, then m fusion rows, then G group
    selector blocks (group ids ascending, members ascending within group).
    Because the groups partition the coefficients, ``K^T K = 2 I + D^T D``.

    Instances are immutable after construction and safe to share across
    concurrently running solvers.
    """

    def __init__(self, fusion: FusionStructure, groups: GroupPartition, weights: np.ndarray):
        if fusion.p != groups.p:
            raise ValidationError(
                f"fusion structure covers {fusion.p} coefficients, partition {groups.p}"
            )
        self.fusion = fusion
        self.groups = groups
        self.p = groups.p
        self.m = fusion.m
        self.n_groups = groups.n_groups
        self.n_blocks = self.p + self.m + self.n_groups

        weights = np.asarray(weights, dtype=float).ravel()
        if weights.size != self.n_blocks:
            raise ValidationError(
                f"weight vector has length {weights.size}, expected {self.n_blocks}"
            )
        if (weights < 0).any():
            raise ValidationError("block weights must be nonnegative")
        self.weights = weights

        # Stacked-order bookkeeping for fast K / K^T application.
        self.group_sizes = groups.sizes
        self.member_order = np.argsort(groups.assignment, kind="stable")
        self.inv_member_order = np.argsort(self.member_order)
        self.group_starts = np.concatenate(([0], np.cumsum(self.group_sizes)[:-1]))
        self.group_repeat_idx = np.repeat(
            np.arange(self.n_groups), self.group_sizes
        )
        self.fusion_pos, self.fusion_neg = fusion.signed_columns
        self._fusion_scatter = np.concatenate([self.fusion_pos, self.fusion_neg])
        self.theta_dim = self.p + self.m + int(self.group_sizes.sum())

        self._k_matrix = None
        self._ktk = None

    # -- block metadata ------------------------------------------------

    @property
    def w_singleton(self) -> np.ndarray:
        return self.weights[: self.p]

    @property
    def w_fusion(self) -> np.ndarray:
        return self.weights[self.p : self.p + self.m]

    @property
    def w_group(self) -> np.ndarray:
        return self.weights[self.p + self.m :]

    def block_info(self):
        """Yield (kind, theta_slice, weight) for each effective group in order."""
        for j in range(self.p):
            yield "lasso", slice(j, j + 1), self.weights[j]
        for i in range(self.m):
            yield "fusion", slice(self.p + i, self.p + i + 1), self.weights[self.p + i]
        base = self.p + self.m
        for g in range(self.n_groups):
            start = base + self.group_starts[g]
            yield "group", slice(start, start + self.group_sizes[g]), self.weights[base + g]

    def lambda_for_blocks(self, lambdas) -> np.ndarray:
        """Per-block regularization level (lam1, lam2, lam3 spread over blocks)."""
        lam1, lam2, lam3 = lambdas
        return np.concatenate(
            [
                np.full(self.p, float(lam1)),
                np.full(self.m, float(lam2)),
                np.full(self.n_groups, float(lam3)),
            ]
        )

    # -- operator application -------------------------------------------

    def apply_k(self, v: np.ndarray) -> np.ndarray:
        """K v: stacked (v, D v, v reordered by group)."""
        out = np.empty(self.theta_dim)
        out[: self.p] = v
        out[self.p : self.p + self.m] = v[self.fusion_pos] - v[self.fusion_neg]
        out[self.p + self.m :] = v[self.member_order]
        return out

    def apply_kt(self, u: np.ndarray) -> np.ndarray:
        """K^T u for a stacked vector u."""
        uf = u[self.p : self.p + self.m]
        out = u[: self.p] + u[self.p + self.m :][self.inv_member_order]
        if self.m:
            out += np.bincount(
                self._fusion_scatter,
                weights=np.concatenate([uf, -uf]),
                minlength=self.p,
            )
        return out

    def group_norms(self, u_group: np.ndarray) -> np.ndarray:
        """Euclidean norm of each group segment of the stacked group part."""
        return np.sqrt(np.add.reduceat(u_group * u_group, self.group_starts))

    # -- assembled matrices ----------------------------------------------

    @property
    def k_matrix(self) -> sp.csr_matrix:
        """The stacked sparse K of shape (p + m + sum p_g) x p."""
        if self._k_matrix is None:
            eye = sp.identity(self.p, format="csr")
            sel = sp.csr_matrix(
                (
                    np.ones(self.p),
                    self.member_order,
                    np.arange(self.p + 1),
                ),
                shape=(self.p, self.p),
            )
            self._k_matrix = sp.vstack(
                [eye, self.fusion.d_matrix, sel], format="csr"
            )
        return self._k_matrix

    def ktk(self) -> sp.csr_matrix:
        """K^T K = 2 I + D^T D (holds because groups form a partition)."""
        if self._ktk is None:
            d = self.fusion.d_matrix
            self._ktk = (2.0 * sp.identity(self.p, format="csr") + d.T @ d).tocsr()
        return self._ktk

    def with_weights(self, weights: np.ndarray) -> "PenaltyOperator":
        """A new operator over the same structure with different block weights."""
        return PenaltyOperator(self.fusion, self.groups, weights)


def default_weights(fusion: FusionStructure, groups: GroupPartition) -> np.ndarray:
    """Unit weights for lasso/fusion blocks, sqrt(group size) for group blocks."""
    return np.concatenate(
        [np.ones(fusion.p + fusion.m), np.sqrt(groups.sizes.astype(float))]
    )


def build_penalty_operator(
    fusion: FusionStructure,
    groups: GroupPartition,
    weights: np.ndarray | None = None,
) -> PenaltyOperator:
    """Assemble the stacked operator; defaults weights to (1, 1, sqrt(p_g))."""
    if weights is None:
        weights = default_weights(fusion, groups)
    return PenaltyOperator(fusion, groups, weights)
