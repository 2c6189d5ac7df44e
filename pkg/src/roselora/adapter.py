"""Frozen base weight plus a masked low-rank update ``W = W0 + B @ A``."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .tensor_core import ContractError, Matrix, ShapeError, as_matrix, matmul


@dataclass(frozen=True, eq=False)
class LoraAdapter:
    w0: Matrix
    a: Matrix
    b: Matrix
    mask_a: Matrix
    mask_b: Matrix

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def shape(self):
        return self.w0.shape

    def __post_init__(self):
        d1, d2 = self.w0.shape
        r = self.a.shape[0]
        if self.a.shape != (r, d2) or self.b.shape != (d1, r):
            raise ShapeError(
                f"adapter factors {self.b.shape} x {self.a.shape} do not fit base {self.w0.shape}"
            )
        if self.mask_a.shape != self.a.shape or self.mask_b.shape != self.b.shape:
            raise ShapeError("mask shapes must match their factors")
        if r < 1:
            raise ContractError("rank must be >= 1")


def init_adapter(w0, rank: int, seed: int) -> LoraAdapter:
    w0 = as_matrix(w0, "w0").copy()
    d1, d2 = w0.shape
    if not 1 <= rank <= min(d1, d2):
        raise ContractError(f"rank {rank} outside [1, {min(d1, d2)}]")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d2)
    a = rng.uniform(-bound, bound, size=(rank, d2))
    b = np.zeros((d1, rank))
    w0.setflags(write=False)
    return LoraAdapter(w0, a, b, np.ones_like(a), np.ones_like(b))


def delta(ad: LoraAdapter) -> Matrix:
    return matmul(ad.b, ad.a)


def effective_weight(ad: LoraAdapter) -> Matrix:
    return ad.w0 + matmul(ad.b, ad.a)


def forward(ad: LoraAdapter, x: Matrix) -> Matrix:
    if x.ndim != 2 or x.shape[0] != ad.w0.shape[1]:
        raise ShapeError(f"input shape {x.shape} does not fit weight {ad.w0.shape}")
    return matmul(ad.w0, x) + matmul(ad.b, matmul(ad.a, x))


def delta_sparsity(ad: LoraAdapter) -> float:
    d = delta(ad)
    return float(np.count_nonzero(d == 0.0) / d.size)


def apply_masks(ad: LoraAdapter) -> LoraAdapter:
    return replace(
        ad,
        a=np.where(ad.mask_a != 0, ad.a, 0.0),
        b=np.where(ad.mask_b != 0, ad.b, 0.0),
    )
