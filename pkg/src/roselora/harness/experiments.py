"""Paired toy experiments: fine-tuning, knowledge editing, forgetting, data scaling.

Every pairing shares the task, the frozen base model, the adapter init
and the mini-batch order; only the schedule / clip differ.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..model import accuracy, predict
from ..pruner import SparsitySchedule
from ..tensor_core import ContractError, Matrix
from ..trainer import TrainConfig, TrainResult, adapted_weights, init_adapters, train
from .tasks import TaskBundle, pretrain_base, subsample


@dataclass(frozen=True)
class EditMetrics:
    edit_success: float
    locality: float


def dense_baseline(cfg: TrainConfig) -> TrainConfig:
    """Same run with pruning and clipping switched off: plain LoRA SGD."""
    s = cfg.schedule
    return replace(cfg, schedule=replace(s, final_keep=1.0), edit_alpha=None)


def _fit(base: Sequence[Matrix], data, cfg: TrainConfig, steps: Optional[int]) -> TrainResult:
    if steps == 0:
        adapters = init_adapters(base, cfg.rank, cfg.seed)
        return TrainResult(adapters, [], [])
    return train(base, data, cfg, steps=steps)


def locality(base: Sequence[Matrix], weights: Sequence[Matrix], x: Matrix) -> float:
    """Share of inputs whose predicted class is unchanged from the base model."""
    if x.shape[1] == 0:
        return 1.0
    return float(np.mean(predict(weights, x) == predict(base, x)))


def run_edit(task: TaskBundle, cfg: TrainConfig, base=None, steps: Optional[int] = None):
    """Edit run returning ``(EditMetrics, TrainResult)``."""
    if task.kind != "fact-edit":
        raise ContractError(f"edit experiment needs a fact-edit task, got {task.kind!r}")
    base = pretrain_base(task) if base is None else base
    x_edit, y_edit = task.adapt_split
    if x_edit.shape[1] == 0:
        adapters = init_adapters(base, cfg.rank, cfg.seed)
        return EditMetrics(0.0, 1.0), TrainResult(adapters, [], [])
    result = _fit(base, task.adapt_split, cfg, steps)
    weights = adapted_weights(result.adapters)
    metrics = EditMetrics(
        edit_success=accuracy(weights, x_edit, y_edit),
        locality=locality(base, weights, task.locality_split[0]),
    )
    return metrics, result


def run_edit_experiment(task: TaskBundle, cfg: TrainConfig, base=None,
                        steps: Optional[int] = None) -> EditMetrics:
    return run_edit(task, cfg, base, steps)[0]


def run_finetune(task: TaskBundle, cfg: TrainConfig, base=None, steps: Optional[int] = None,
                 data=None):
    """Fine-tune on the adaptation split; returns ``(eval accuracy, TrainResult)``."""
    if task.kind != "classification":
        raise ContractError(f"fine-tuning needs a classification task, got {task.kind!r}")
    base = pretrain_base(task) if base is None else base
    result = _fit(base, task.adapt_split if data is None else data, cfg, steps)
    weights = adapted_weights(result.adapters)
    eval_split = task.adapt_eval_split or task.adapt_split
    return accuracy(weights, *eval_split), result


def run_forgetting_experiment(task: TaskBundle, cfg: TrainConfig, base=None,
                              steps: Optional[int] = None) -> Tuple[float, float]:
    """``(adapt accuracy, retention)``; retention = post/pre accuracy on the pre-train split."""
    base = pretrain_base(task) if base is None else base
    adapt_acc, result = run_finetune(task, cfg, base, steps)
    weights = adapted_weights(result.adapters)
    before = accuracy(base, *task.pretrain_split)
    after = accuracy(weights, *task.pretrain_split)
    retention = after / before if before > 0 else 1.0
    return adapt_acc, retention


def run_data_scaling(task: TaskBundle, cfg: TrainConfig, fractions: Sequence[float],
                     base=None, steps: Optional[int] = None) -> List[Dict]:
    """Paired LoRA / RoseLoRA accuracy on seeded subsamples of the adaptation split."""
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ContractError(f"fraction {f} outside (0, 1]")
    base = pretrain_base(task) if base is None else base
    rows = []
    for f in fractions:
        data = subsample(task.adapt_split, f, cfg.seed)
        lora_acc, _ = run_finetune(task, dense_baseline(cfg), base, steps, data=data)
        rose_acc, _ = run_finetune(task, cfg, base, steps, data=data)
        rows.append(dict(
            fraction=float(f),
            n_train=int(data[0].shape[1]),
            lora_accuracy=lora_acc,
            roselora_accuracy=rose_acc,
            gap=rose_acc - lora_acc,
        ))
    return rows
