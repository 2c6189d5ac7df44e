import numpy as np
import pytest

from roselora.harness.config import load_config, task_from, train_config_from
from roselora.harness.tasks import pretrain_base


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CACHE = {}


def task_and_base(kind, seed):
    """Session-wide cache: task generation and pre-training are deterministic."""
    key = (kind, seed)
    if key not in _CACHE:
        cfg = load_config(kind=kind)
        task = task_from(cfg, seed)
        _CACHE[key] = (cfg, task, pretrain_base(task))
    return _CACHE[key]


@pytest.fixture
def cls_setup():
    cfg, task, base = task_and_base("classification", 0)
    return cfg, task, base, train_config_from(cfg, 0)


@pytest.fixture
def edit_setup():
    cfg, task, base = task_and_base("fact-edit", 0)
    return cfg, task, base, train_config_from(cfg, 0)
