import numpy as np
import pytest
from dataclasses import replace

from roselora.adapter import (apply_masks, delta_sparsity, effective_weight, forward,
                              init_adapter)
from roselora.pruner import prune_adapter
from roselora.sensitivity import init_state
from roselora.tensor_core import ContractError, ShapeError, matmul


def test_init_gives_zero_delta(rng):
    w0 = rng.standard_normal((6, 5))
    ad = init_adapter(w0, 2, seed=0)
    assert np.array_equal(effective_weight(ad), w0)
    assert np.all(ad.mask_a == 1) and np.all(ad.mask_b == 1)
    assert np.all(np.abs(ad.a) <= 1 / np.sqrt(5))


def test_init_is_seeded(rng):
    w0 = rng.standard_normal((6, 5))
    a1, a2 = init_adapter(w0, 2, 7), init_adapter(w0, 2, 7)
    assert a1.a.tobytes() == a2.a.tobytes()
    assert not np.array_equal(init_adapter(w0, 2, 8).a, a1.a)


@pytest.mark.parametrize("rank", [0, 6])
def test_init_rank_out_of_range(rank):
    with pytest.raises(ContractError):
        init_adapter(np.ones((5, 8)), rank, 0)


def test_effective_weight_outer_product():
    ad = init_adapter(np.zeros((2, 2)), 1, 0)
    ad = replace(ad, b=np.array([[1.0], [1.0]]), a=np.array([[2.0, 3.0]]))
    assert effective_weight(ad).tolist() == [[2.0, 3.0], [2.0, 3.0]]


def _random_adapter(rng, d1=8, d2=6, r=3):
    ad = init_adapter(rng.standard_normal((d1, d2)), r, 0)
    return replace(ad, a=rng.standard_normal((r, d2)), b=rng.standard_normal((d1, r)))


def test_effective_weight_matches_recompute(rng):
    ad = _random_adapter(rng)
    assert np.max(np.abs(effective_weight(ad) - (ad.w0 + matmul(ad.b, ad.a)))) <= 1e-12


def test_forward_matches_dense(rng):
    ad = _random_adapter(rng)
    x = rng.standard_normal((6, 11))
    assert np.max(np.abs(forward(ad, x) - effective_weight(ad) @ x)) <= 1e-10
    assert np.array_equal(forward(ad, np.zeros((6, 3))), np.zeros((8, 3)))


def test_forward_with_zero_b_is_base(rng):
    ad = init_adapter(rng.standard_normal((4, 3)), 2, 0)
    x = rng.standard_normal((3, 5))
    assert np.allclose(forward(ad, x), ad.w0 @ x, atol=0)


def test_forward_shape_error(rng):
    with pytest.raises(ShapeError):
        forward(_random_adapter(rng), np.ones((5, 2)))


def test_delta_sparsity_zero_b(rng):
    assert delta_sparsity(init_adapter(rng.standard_normal((4, 4)), 2, 0)) == 1.0


def test_delta_sparsity_example1_dense(rng):
    ad = init_adapter(np.zeros((5, 4)), 3, 0)
    a = np.zeros((3, 4)); a[0] = rng.uniform(0.5, 1.0, 4)
    b = np.zeros((5, 3)); b[:, 0] = rng.uniform(0.5, 1.0, 5)
    assert delta_sparsity(replace(ad, a=a, b=b)) == 0.0


def test_delta_sparsity_after_keep_005(rng):
    ad = _random_adapter(rng, 64, 64, 4)
    st = init_state(ad)
    st = replace(st, ema_a=rng.random(ad.a.shape), ema_b=rng.random(ad.b.shape))
    # bound for 3 survivors of 64 per row/column, rank 4: 1 - 4 * (3/64)^2
    assert delta_sparsity(prune_adapter(ad, st, 0.05)) >= 0.99


def test_apply_masks(rng):
    ad = _random_adapter(rng)
    assert np.array_equal(apply_masks(ad).a, ad.a)
    zeroed = apply_masks(replace(ad, mask_a=np.zeros_like(ad.a)))
    assert np.array_equal(zeroed.a, np.zeros_like(ad.a))
    half = replace(ad, mask_b=(rng.random(ad.b.shape) > 0.5).astype(float))
    once = apply_masks(half)
    assert np.array_equal(apply_masks(once).b, once.b)


def test_base_weight_is_read_only(rng):
    ad = init_adapter(rng.standard_normal((3, 3)), 1, 0)
    with pytest.raises(ValueError):
        ad.w0[0, 0] = 1.0
