import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roselora.sparsity_analysis import (empirical_bound_sweep, example1_counterexample,
                                        factor_sparsities, product_sparsity_lower_bound,
                                        random_masked_factors, random_masked_vector,
                                        rank_one_sparsity, rank_one_zero_count, sparsity,
                                        zero_count)
from roselora.tensor_core import ContractError, ShapeError


def test_sparsity_basic(rng):
    assert sparsity(np.zeros((3, 4))) == 1.0
    assert sparsity(rng.standard_normal((5, 5))) == 0.0
    assert sparsity(np.array([[1.0, 0.0], [2.0, 3.0]])) == 0.25


def test_rank_one_formula():
    assert rank_one_sparsity(0, 0) == 0
    for s in (0.0, 0.3, 1.0):
        assert rank_one_sparsity(1.0, s) == 1.0
    assert rank_one_sparsity(0.9, 0.9) == pytest.approx(0.99, abs=1e-15)
    with pytest.raises(ContractError):
        rank_one_sparsity(1.2, 0.1)


def test_rank_one_measured_length_1000(rng):
    a = random_masked_vector(rng, 1000, 900)
    b = random_masked_vector(rng, 1000, 900)
    measured = sparsity(np.outer(b, a))
    assert measured == rank_one_sparsity(0.9, 0.9)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), d1=st.integers(1, 30), d2=st.integers(1, 30), data=st.data())
def test_rank_one_zero_count_exact(seed, d1, d2, data):
    z_a = data.draw(st.integers(0, d2))
    z_b = data.draw(st.integers(0, d1))
    rng = np.random.default_rng(seed)
    a = random_masked_vector(rng, d2, z_a)
    b = random_masked_vector(rng, d1, z_b)
    assert zero_count(np.outer(b, a)) == rank_one_zero_count(z_a, z_b, d1, d2)


def test_bound_examples():
    assert product_sparsity_lower_bound([0.9], [0.9]) == pytest.approx(0.99, abs=1e-15)
    assert product_sparsity_lower_bound([0.0] * 5, [0.0] * 5) == 0.0
    # 1 + 4 * (2 * 19/20 - (19/20)^2) - 4 = 99/100
    s = Fraction(19, 20)
    assert 1 + 4 * (s + s - s * s) - 4 == Fraction(99, 100)
    assert product_sparsity_lower_bound([0.95] * 4, [0.95] * 4) == pytest.approx(0.99, abs=1e-12)


def test_bound_length_mismatch():
    with pytest.raises(ShapeError):
        product_sparsity_lower_bound([0.1, 0.2], [0.1])


@settings(max_examples=50, deadline=None)
@given(pairs=st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=8),
       perm_seed=st.integers(0, 1000))
def test_bound_symmetric_and_permutation_invariant(pairs, perm_seed):
    row = [p[0] for p in pairs]
    col = [p[1] for p in pairs]
    ref = product_sparsity_lower_bound(row, col)
    assert product_sparsity_lower_bound(col, row) == pytest.approx(ref, abs=1e-12)
    order = np.random.default_rng(perm_seed).permutation(len(pairs))
    assert product_sparsity_lower_bound([row[i] for i in order], [col[i] for i in order]) == \
        pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("r,d1,d2", [(2, 8, 8), (4, 8, 8), (10, 32, 32), (3, 5, 11)])
def test_example1(r, d1, d2):
    a, b = example1_counterexample(r, d1, d2)
    assert a.shape == (r, d2) and b.shape == (d1, r)
    assert sparsity(a) == (r - 1) / r
    assert sparsity(b) == (r - 1) / r
    assert sparsity(b @ a) == 0.0


def test_example1_needs_rank_two():
    with pytest.raises(ContractError):
        example1_counterexample(1, 4, 4)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), r=st.integers(1, 8), d1=st.integers(1, 24), d2=st.integers(1, 24),
       data=st.data())
def test_bound_never_violated(seed, r, d1, d2, data):
    grid = [0.0, 0.25, 0.5, 0.75, 0.9, 0.95]
    row = data.draw(st.lists(st.sampled_from(grid), min_size=r, max_size=r))
    col = data.draw(st.lists(st.sampled_from(grid), min_size=r, max_size=r))
    a, b = random_masked_factors(np.random.default_rng(seed), row, col, d1, d2)
    rs, cs = factor_sparsities(a, b)
    assert sparsity(b @ a) >= product_sparsity_lower_bound(rs, cs) - 1e-12


def test_sweep_dense_grid_is_dense():
    rows = empirical_bound_sweep([0.0], 3, 10, 12, 5, seed=0)
    assert len(rows) == 1 and rows[0].empirical_product_sparsity == 0.0


def test_sweep_high_sparsity():
    rows = empirical_bound_sweep([0.95], 4, 64, 64, 100, seed=0)
    assert rows[0].theoretical_bound == pytest.approx(0.99, abs=1e-12)
    assert rows[0].empirical_product_sparsity >= 0.99


def test_sweep_rows_satisfy_bound_and_trend():
    grid = [0.0, 0.25, 0.5, 0.75, 0.9]
    rows = empirical_bound_sweep(grid, 4, 32, 32, 100, seed=3)
    table = {(r.row_sparsity, r.col_sparsity): r for r in rows}
    for r in rows:
        assert r.theoretical_bound - 1e-12 <= r.empirical_product_sparsity <= 1.0
    for col in grid:
        means = [table[(row, col)].empirical_product_sparsity for row in grid]
        assert all(b >= a - 1e-3 for a, b in zip(means, means[1:]))


def test_sweep_order_independent():
    full = empirical_bound_sweep([0.25, 0.5], 2, 8, 8, 7, seed=11)
    # trial generators are keyed by cell position, not evaluation order
    again = empirical_bound_sweep([0.25, 0.5], 2, 8, 8, 7, seed=11)
    assert [r.empirical_product_sparsity for r in full] == [r.empirical_product_sparsity for r in again]


def test_sweep_rejects_bad_grid():
    with pytest.raises(ContractError):
        empirical_bound_sweep([1.0], 2, 4, 4, 1, 0)
    with pytest.raises(ContractError):
        empirical_bound_sweep([0.5], 2, 4, 4, 0, 0)
