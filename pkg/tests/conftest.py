import numpy as np
import pytest

from fsgl.penalty import (
    GridSpec,
    GroupPartition,
    build_fusion_matrix,
    build_penalty_operator,
)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def chain_penalty(p, n_groups=1, weights=None):
    """Penalty over a 1D chain of length p with equal-ish contiguous groups."""
    fusion = build_fusion_matrix(GridSpec((p,)))
    if n_groups == 1:
        groups = GroupPartition.single_group(p)
    else:
        assignment = 1 + (np.arange(p) * n_groups) // p
        groups = GroupPartition(assignment)
    return build_penalty_operator(fusion, groups, weights)


def random_grid_and_partition(rng, max_extent=4):
    """A random small grid plus a random partition over its cells."""
    ndim = int(rng.integers(1, 4))
    dims = tuple(int(rng.integers(1, max_extent + 1)) for _ in range(ndim))
    p = int(np.prod(dims))
    n_groups = int(rng.integers(1, p + 1))
    assignment = np.concatenate(
        [np.arange(1, n_groups + 1), rng.integers(1, n_groups + 1, size=p - n_groups)]
    )
    rng.shuffle(assignment)
    return GridSpec(dims), GroupPartition(assignment)


def brute_force_objective(x, y, penalty, lambdas, beta):
    """Direct evaluation of the penalized objective from the assembled K."""
    lam1, lam2, lam3 = lambdas
    k = penalty.k_matrix.toarray()
    kb = k @ beta
    p, m = penalty.p, penalty.m
    total = 0.5 * np.sum((y - x @ beta) ** 2)
    total += lam1 * np.sum(penalty.w_singleton * np.abs(kb[:p]))
    total += lam2 * np.sum(penalty.w_fusion * np.abs(kb[p : p + m]))
    start = p + m
    for g, size in enumerate(penalty.group_sizes):
        seg = kb[start : start + size]
        total += lam3 * penalty.w_group[g] * np.sqrt(seg @ seg)
        start += size
    return total
