from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roselora.adapter import init_adapter
from roselora.pruner import (SparsitySchedule, keep_count, keep_fraction_at, prune_adapter,
                             prune_vector)
from roselora.sensitivity import init_state
from roselora.sparsity_analysis import sparsity
from roselora.tensor_core import ContractError, ShapeError


def test_schedule_boundaries():
    s = SparsitySchedule(0.05, 100, 300, 400)
    assert keep_fraction_at(s, 1) == 1.0
    assert keep_fraction_at(s, 99) == 1.0
    assert keep_fraction_at(s, 100) == 1.0
    assert keep_fraction_at(s, 300) == 0.05
    assert keep_fraction_at(s, 400) == 0.05


def test_schedule_midpoint():
    # exact rational evaluation: 1/20 + 19/20 * (1/2)^3 = 27/160
    expected = Fraction(1, 20) + Fraction(19, 20) * Fraction(1, 2) ** 3
    assert expected == Fraction(27, 160)
    s = SparsitySchedule(0.05, 100, 300, 400)
    assert keep_fraction_at(s, 200) == pytest.approx(float(expected), abs=1e-15)
    assert keep_fraction_at(s, 200) == pytest.approx(0.16875, abs=1e-15)


def test_schedule_out_of_range():
    s = SparsitySchedule(0.5, 1, 5, 10)
    with pytest.raises(ContractError):
        keep_fraction_at(s, 0)
    with pytest.raises(ContractError):
        keep_fraction_at(s, 11)


@pytest.mark.parametrize("args", [(0.0, 1, 5, 10), (1.5, 1, 5, 10), (0.5, 5, 5, 10), (0.5, 1, 11, 10)])
def test_schedule_invalid(args):
    with pytest.raises(ContractError):
        SparsitySchedule(*args)


def test_from_sparsity():
    assert SparsitySchedule.from_sparsity(0.95, 1, 2, 3).final_keep == pytest.approx(0.05)


@settings(max_examples=30, deadline=None)
@given(keep=st.floats(0.01, 1.0), t_i=st.integers(0, 50), span=st.integers(1, 100), tail=st.integers(0, 50))
def test_schedule_monotone_and_bounded(keep, t_i, span, tail):
    s = SparsitySchedule(keep, t_i, t_i + span, t_i + span + tail)
    vals = [keep_fraction_at(s, t) for t in range(1, s.total_steps + 1)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert all(keep <= v <= 1.0 for v in vals)


def test_schedule_continuity_dense_grid():
    s = SparsitySchedule(0.1, 1000, 3000, 4000)
    # largest jump on a unit grid is bounded by the cubic's slope at t_i
    jumps = [keep_fraction_at(s, t) - keep_fraction_at(s, t + 1) for t in range(1, 4000)]
    assert max(jumps) <= 3 * 0.9 / 2000 + 1e-12
    assert min(jumps) >= 0


def test_prune_vector_example():
    out, mask = prune_vector([10, 20, 30, 40], [0.5, 0.1, 0.9, 0.3], 0.5)
    assert out.tolist() == [10, 0, 30, 0]
    assert mask.tolist() == [1, 0, 1, 0]


def test_prune_vector_keep_all():
    out, mask = prune_vector([1.0, -2.0, 3.0], [0.0, 0.0, 1.0], 1.0)
    assert out.tolist() == [1.0, -2.0, 3.0] and mask.tolist() == [1, 1, 1]


def test_prune_vector_ties_lower_index():
    out, mask = prune_vector([1.0, 2.0, 3.0, 4.0], [1.0, 1.0, 1.0, 1.0], 0.5)
    assert mask.tolist() == [1, 1, 0, 0]


def test_prune_vector_keeps_at_least_one():
    out, mask = prune_vector([1.0, 2.0, 3.0], [0.2, 0.3, 0.1], 0.01)
    assert mask.tolist() == [0, 1, 0]


def test_prune_vector_length_mismatch():
    with pytest.raises(ShapeError):
        prune_vector([1.0, 2.0], [1.0], 0.5)


@settings(max_examples=80, deadline=None)
@given(scores=st.lists(st.floats(0, 10), min_size=1, max_size=40), keep=st.floats(0.01, 1.0))
def test_prune_vector_never_drops_a_strictly_better_entry(scores, keep):
    vals = np.arange(1.0, len(scores) + 1)
    out, mask = prune_vector(vals, scores, keep)
    s = np.array(scores)
    assert int(mask.sum()) == keep_count(keep, len(scores))
    if (mask == 0).any():
        assert s[mask == 0].max() <= s[mask == 1].min()
    again, mask2 = prune_vector(out, scores, keep)
    assert np.array_equal(again, out) and np.array_equal(mask2, mask)


def _adapter(rng, d1, d2, r):
    ad = init_adapter(rng.standard_normal((d1, d2)), r, 0)
    ad = replace(ad, a=rng.standard_normal((r, d2)), b=rng.standard_normal((d1, r)))
    st_ = replace(init_state(ad), ema_a=rng.random((r, d2)), ema_b=rng.random((d1, r)))
    return ad, st_


def test_prune_adapter_keep_one_is_identity(rng):
    ad, st_ = _adapter(rng, 6, 5, 2)
    out = prune_adapter(ad, st_, 1.0)
    assert np.array_equal(out.a, ad.a) and np.array_equal(out.b, ad.b)
    assert np.all(out.mask_a == 1) and np.all(out.mask_b == 1)


def test_prune_adapter_half_row(rng):
    ad, st_ = _adapter(rng, 3, 4, 1)
    out = prune_adapter(ad, st_, 0.5)
    assert np.count_nonzero(out.a) == 2


def test_prune_adapter_rows_and_columns_match_prune_vector(rng):
    ad, st_ = _adapter(rng, 9, 7, 3)
    out = prune_adapter(ad, st_, 0.3)
    for i in range(3):
        row, _ = prune_vector(ad.a[i], st_.ema_a[i], 0.3)
        col, _ = prune_vector(ad.b[:, i], st_.ema_b[:, i], 0.3)
        assert np.array_equal(out.a[i], row)
        assert np.array_equal(out.b[:, i], col)


def test_prune_adapter_sparse_product(rng):
    ad, st_ = _adapter(rng, 64, 64, 4)
    out = prune_adapter(ad, st_, 0.05)
    assert sparsity(out.b @ out.a) >= 0.99


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), keep=st.floats(0.01, 1.0),
       d1=st.integers(1, 20), d2=st.integers(1, 20), r=st.integers(1, 4))
def test_prune_adapter_respects_budget_and_is_idempotent(seed, keep, d1, d2, r):
    r = min(r, d1, d2)
    ad, st_ = _adapter(np.random.default_rng(seed), d1, d2, r)
    out = prune_adapter(ad, st_, keep)
    assert np.all(np.count_nonzero(out.a, axis=1) <= keep_count(keep, d2))
    assert np.all(np.count_nonzero(out.b, axis=0) <= keep_count(keep, d1))
    again = prune_adapter(out, st_, keep)
    assert np.array_equal(again.a, out.a) and np.array_equal(again.b, out.b)
