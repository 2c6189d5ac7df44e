"""Row/column top-k pruning of the low-rank factors and the cubic keep schedule.

Everything here speaks in *keep fraction* (share of entries retained).
Sparsity, where it appears in configs, is ``1 - keep``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .adapter import LoraAdapter
from .sensitivity import SensitivityState
from .tensor_core import ContractError, ShapeError


@dataclass(frozen=True)
class SparsitySchedule:
    final_keep: float
    t_i: int
    t_f: int
    total_steps: int

    def __post_init__(self):
        if not 0.0 < self.final_keep <= 1.0:
            raise ContractError(f"final_keep must be in (0, 1], got {self.final_keep}")
        if not 0 <= self.t_i < self.t_f <= self.total_steps:
            raise ContractError(
                f"need 0 <= t_i < t_f <= total_steps, got {self.t_i}, {self.t_f}, {self.total_steps}"
            )

    @classmethod
    def from_sparsity(cls, sparsity: float, t_i: int, t_f: int, total_steps: int):
        return cls(1.0 - sparsity, t_i, t_f, total_steps)


def keep_fraction_at(s: SparsitySchedule, t: int) -> float:
    if not 1 <= t <= s.total_steps:
        raise ContractError(f"step {t} outside [1, {s.total_steps}]")
    if t < s.t_i:
        return 1.0
    if t < s.t_f:
        frac = 1.0 - (t - s.t_i) / (s.t_f - s.t_i)
        return min(1.0, s.final_keep + (1.0 - s.final_keep) * frac ** 3)
    return s.final_keep


def keep_count(keep: float, d: int) -> int:
    return max(1, math.floor(keep * d))


def prune_vector(values, scores, keep: float):
    """Keep the ``max(1, floor(keep*d))`` highest-scored entries.

    Ties go to the lower index.  Returns ``(pruned, mask)``.
    """
    values = np.asarray(values, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if values.shape != scores.shape or values.ndim != 1:
        raise ShapeError(f"values {values.shape} and scores {scores.shape} must be equal-length vectors")
    if not 0.0 < keep <= 1.0:
        raise ContractError(f"keep must be in (0, 1], got {keep}")
    d = values.shape[0]
    k = keep_count(keep, d)
    mask = np.zeros(d)
    # stable sort on negated scores => descending, lower index first on ties
    mask[np.argsort(-scores, kind="stable")[:k]] = 1.0
    return np.where(mask != 0, values, 0.0), mask


def _prune_rows(values: np.ndarray, scores: np.ndarray, keep: float):
    d = values.shape[1]
    k = keep_count(keep, d)
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    mask = np.zeros_like(values)
    np.put_along_axis(mask, order, 1.0, axis=1)
    return np.where(mask != 0, values, 0.0), mask


def prune_adapter(ad: LoraAdapter, st: SensitivityState, keep: float) -> LoraAdapter:
    """Top-k per row of ``a`` and per column of ``b`` by smoothed score."""
    if st.ema_a.shape != ad.a.shape or st.ema_b.shape != ad.b.shape:
        raise ShapeError("sensitivity state does not match adapter")
    if not 0.0 < keep <= 1.0:
        raise ContractError(f"keep must be in (0, 1], got {keep}")
    a, mask_a = _prune_rows(ad.a, st.ema_a, keep)
    bt, mask_bt = _prune_rows(ad.b.T, st.ema_b.T, keep)
    return replace(ad, a=a, b=np.ascontiguousarray(bt.T), mask_a=mask_a,
                   mask_b=np.ascontiguousarray(mask_bt.T))
