"""Sensitivity importance scores ``|w * dL/dw|`` with EMA smoothing."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .adapter import LoraAdapter
from .tensor_core import ContractError, Matrix, ShapeError


@dataclass(frozen=True, eq=False)
class SensitivityState:
    ema_a: Matrix
    ema_b: Matrix
    beta: float
    steps_seen: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ContractError(f"beta must lie in [0, 1), got {self.beta}")


def init_state(ad: LoraAdapter, beta: float = 0.8) -> SensitivityState:
    return SensitivityState(np.zeros_like(ad.a), np.zeros_like(ad.b), float(beta), 0)


def instantaneous_sensitivity(param: Matrix, grad: Matrix) -> Matrix:
    if param.shape != grad.shape:
        raise ShapeError(f"param {param.shape} and grad {grad.shape} differ")
    return np.abs(param * grad)


def update_ema(st: SensitivityState, inst_a: Matrix, inst_b: Matrix) -> SensitivityState:
    if inst_a.shape != st.ema_a.shape or inst_b.shape != st.ema_b.shape:
        raise ShapeError(
            f"scores {inst_a.shape}/{inst_b.shape} do not match state "
            f"{st.ema_a.shape}/{st.ema_b.shape}"
        )
    if st.steps_seen == 0:
        # cold start: first observation seeds the average
        ema_a, ema_b = inst_a.copy(), inst_b.copy()
    else:
        beta = st.beta
        ema_a = beta * st.ema_a + (1.0 - beta) * inst_a
        ema_b = beta * st.ema_b + (1.0 - beta) * inst_b
    return replace(st, ema_a=ema_a, ema_b=ema_b, steps_seen=st.steps_seen + 1)
