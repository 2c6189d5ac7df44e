"""YAML experiment configs.

Keys mirror the dataclasses: ``train`` holds TrainConfig fields, ``train.schedule``
holds SparsitySchedule fields, ``task`` holds the task generator arguments.
``sparsity`` (share of zeros, as hyper-parameter tables report it) is
accepted in place of ``final_keep`` and converted as ``final_keep = 1 - sparsity``.
"""
from __future__ import annotations

import copy
from typing import Any, Dict, Optional

import yaml

from ..pruner import SparsitySchedule
from ..tensor_core import ContractError
from ..trainer import TrainConfig
from .tasks import TaskBundle, gen_classification_task, gen_fact_edit_task

# toy-scale defaults; beta and sparsities follow the published hyper-parameters,
# learning rates and the norm bound are re-tuned for these model sizes
PRESETS: Dict[str, Dict[str, Any]] = {
    "classification": {
        "seed": 0,
        "task": {
            "kind": "classification", "input_dim": 16, "num_classes": 4, "n_pretrain": 2000,
            "n_adapt": 400, "hidden": 64, "teacher_hidden": 32, "n_eval": 1000,
            "n_novel": 4, "shift": 1.0,
        },
        "train": {
            "learning_rate": 0.05, "beta": 0.8, "batch_size": 32, "rank": 8, "edit_alpha": None,
            "schedule": {"sparsity": 0.865, "t_i": 150, "t_f": 1050, "total_steps": 1500},
        },
        "experiment": {"seeds": [0, 1, 2], "fractions": [1.0, 0.5, 0.25, 0.125]},
    },
    "fact-edit": {
        "seed": 0,
        "task": {
            "kind": "fact-edit", "n_facts": 200, "n_edit": 10, "key_dim": 128,
            "num_values": 16, "hidden": 128, "key_active": 8,
        },
        "train": {
            "learning_rate": 0.2, "beta": 0.8, "batch_size": 10, "rank": 4, "edit_alpha": 6.0,
            "schedule": {"sparsity": 0.95, "t_i": 150, "t_f": 1050, "total_steps": 1500},
        },
        "experiment": {"seeds": [0, 1, 2]},
    },
}

SWEEP_DEFAULTS = {
    "grid": [0.0, 0.25, 0.5, 0.75, 0.9, 0.95],
    "rank": 4, "d1": 64, "d2": 64, "trials": 100,
}


def _merge(base: Dict, override: Dict) -> Dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: Optional[str] = None, kind: Optional[str] = None,
                overrides: Optional[Dict] = None) -> Dict:
    raw: Dict = {}
    if path is not None:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
        if not isinstance(raw, dict):
            raise ContractError(f"{path}: config root must be a mapping")
    kind = kind or raw.get("task", {}).get("kind") or "classification"
    if kind not in PRESETS:
        raise ContractError(f"unknown task kind {kind!r}")
    cfg = _merge(PRESETS[kind], raw)
    if "schedule" in raw.get("train", {}):
        sched = raw["train"]["schedule"]
        # an explicit final_keep in the file wins over the preset's sparsity
        if "final_keep" in sched and "sparsity" not in sched:
            cfg["train"]["schedule"].pop("sparsity", None)
    cfg["task"]["kind"] = kind
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def schedule_from(d: Dict) -> SparsitySchedule:
    d = dict(d)
    if "sparsity" in d:
        if "final_keep" in d:
            raise ContractError("give either sparsity or final_keep, not both")
        d["final_keep"] = 1.0 - float(d.pop("sparsity"))
    return SparsitySchedule(
        final_keep=float(d["final_keep"]), t_i=int(d["t_i"]), t_f=int(d["t_f"]),
        total_steps=int(d["total_steps"]),
    )


def train_config_from(cfg: Dict, seed: Optional[int] = None) -> TrainConfig:
    t = cfg["train"]
    alpha = t.get("edit_alpha")
    return TrainConfig(
        learning_rate=float(t["learning_rate"]),
        schedule=schedule_from(t["schedule"]),
        beta=float(t.get("beta", 0.8)),
        edit_alpha=None if alpha is None else float(alpha),
        batch_size=int(t.get("batch_size", 32)),
        seed=int(cfg.get("seed", 0) if seed is None else seed),
        rank=int(t.get("rank", 4)),
    )


def task_from(cfg: Dict, seed: Optional[int] = None) -> TaskBundle:
    params = dict(cfg["task"])
    kind = params.pop("kind")
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    if kind == "classification":
        return gen_classification_task(seed, **params)
    if kind == "fact-edit":
        return gen_fact_edit_task(seed, **params)
    raise ContractError(f"unknown task kind {kind!r}")


def train_config_dict(tc: TrainConfig) -> Dict:
    s = tc.schedule
    return {
        "learning_rate": tc.learning_rate, "beta": tc.beta, "edit_alpha": tc.edit_alpha,
        "batch_size": tc.batch_size, "seed": tc.seed, "rank": tc.rank,
        "schedule": {"final_keep": s.final_keep, "t_i": s.t_i, "t_f": s.t_f,
                     "total_steps": s.total_steps},
    }
