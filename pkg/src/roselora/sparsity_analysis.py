"""Zero-pattern accounting for products of row/column-sparse low-rank factors.

Random factors are filled with continuous (normal) values at their
surviving positions, so an entry of ``B @ A`` is exactly zero only when
every rank-one contribution to it is structurally zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .tensor_core import ContractError, Matrix, ShapeError, matmul


@dataclass(frozen=True)
class BoundSweepRow:
    row_sparsity: float
    col_sparsity: float
    rank: int
    empirical_product_sparsity: float
    theoretical_bound: float
    trials: int


def sparsity(m) -> float:
    m = np.asarray(m)
    return float(np.count_nonzero(m == 0.0) / m.size)


def zero_count(m) -> int:
    return int(np.count_nonzero(np.asarray(m) == 0.0))


def _check_unit(*vals):
    for v in vals:
        if not 0.0 <= v <= 1.0:
            raise ContractError(f"sparsity {v} outside [0, 1]")


def rank_one_sparsity(s_a: float, s_b: float) -> float:
    _check_unit(s_a, s_b)
    return s_a + s_b - s_a * s_b


def rank_one_zero_count(z_a: int, z_b: int, d1: int, d2: int) -> int:
    """Exact zeros in ``b @ a`` for ``b`` (d1) with z_b zeros, ``a`` (d2) with z_a zeros."""
    return z_b * d2 + z_a * d1 - z_a * z_b


def product_sparsity_lower_bound(row_s: Sequence[float], col_s: Sequence[float]) -> float:
    """Lower bound on s(B @ A) from per-row sparsity of A and per-column sparsity of B."""
    row_s = [float(v) for v in row_s]
    col_s = [float(v) for v in col_s]
    if len(row_s) != len(col_s):
        raise ShapeError(f"got {len(row_s)} row sparsities and {len(col_s)} column sparsities")
    _check_unit(*row_s, *col_s)
    r = len(row_s)
    total = sum(sa + sb - sa * sb for sa, sb in zip(row_s, col_s))
    return max(0.0, 1.0 + total - r)


def factor_sparsities(a: Matrix, b: Matrix) -> Tuple[List[float], List[float]]:
    """Per-row sparsity of ``a`` and per-column sparsity of ``b``."""
    return [sparsity(row) for row in a], [sparsity(col) for col in b.T]


def bound_for(a: Matrix, b: Matrix) -> float:
    row_s, col_s = factor_sparsities(a, b)
    return product_sparsity_lower_bound(row_s, col_s)


def example1_counterexample(r: int, d1: int, d2: int, seed: int = 0) -> Tuple[Matrix, Matrix]:
    """Factors that are (r-1)/r sparse yet multiply to a fully dense matrix.

    Returns ``(A, B)`` with A = [a^T; 0] and B = [b, 0].
    """
    if r < 2:
        raise ContractError("the construction needs r >= 2")
    if d1 < 1 or d2 < 1:
        raise ContractError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    a = np.zeros((r, d2))
    b = np.zeros((d1, r))
    a[0] = _nonzero_normal(rng, d2)
    b[:, 0] = _nonzero_normal(rng, d1)
    return a, b


def _nonzero_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal(n)
    v[v == 0.0] = 1.0
    return v


def zeros_for(s: float, d: int) -> int:
    """Zero count realizing at least sparsity ``s`` in a length-d vector."""
    return min(d, math.ceil(s * d - 1e-9))


def random_masked_vector(rng: np.random.Generator, d: int, n_zero: int) -> np.ndarray:
    v = _nonzero_normal(rng, d)
    v[rng.choice(d, size=n_zero, replace=False)] = 0.0
    return v


def random_masked_factors(
    rng: np.random.Generator, row_s: Sequence[float], col_s: Sequence[float], d1: int, d2: int
) -> Tuple[Matrix, Matrix]:
    """Random ``A`` (r x d2) and ``B`` (d1 x r) with the given per-row/column sparsity."""
    r = len(row_s)
    a = np.stack([random_masked_vector(rng, d2, zeros_for(s, d2)) for s in row_s])
    b = np.stack([random_masked_vector(rng, d1, zeros_for(s, d1)) for s in col_s], axis=1)
    assert a.shape == (r, d2) and b.shape == (d1, r)
    return a, b


def empirical_bound_sweep(
    sparsity_grid: Sequence[float],
    rank: int,
    d1: int,
    d2: int,
    trials: int,
    seed: int,
) -> List[BoundSweepRow]:
    """Measure mean s(B @ A) over random mask placements for every grid pair.

    Every row of A shares ``row_s`` and every column of B shares ``col_s``;
    the reported bound is evaluated at those nominal values.  Trial ``k``
    of cell ``(i, j)`` draws from its own generator keyed by
    ``(seed, i, j, k)`` so cells are independent of evaluation order.
    """
    if trials < 1:
        raise ContractError("trials must be >= 1")
    grid = [float(s) for s in sparsity_grid]
    for s in grid:
        if not 0.0 <= s < 1.0:
            raise ContractError(f"grid value {s} outside [0, 1)")
    rows = []
    for i, row_s in enumerate(grid):
        for j, col_s in enumerate(grid):
            measured = []
            for k in range(trials):
                rng = np.random.default_rng([seed, i, j, k])
                a, b = random_masked_factors(rng, [row_s] * rank, [col_s] * rank, d1, d2)
                measured.append(sparsity(matmul(b, a)))
            bound = product_sparsity_lower_bound([row_s] * rank, [col_s] * rank)
            rows.append(BoundSweepRow(row_s, col_s, rank, float(np.mean(measured)), bound, trials))
    return rows
