"""Synthetic tasks standing in for "pre-trained model + downstream data".

Two kinds:

* ``classification``: a seeded teacher MLP labels Gaussian inputs.  The
  base model is pre-trained on the teacher's labels; the adaptation split
  comes from a shifted region where extra input features are active, so
  fine-tuning has something to learn and something to forget.
* ``fact-edit``: random key vectors mapped to value classes.  The base
  model memorizes every fact; the adaptation split rewrites ``n_edit`` of
  them and the untouched facts form the locality split.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..model import accuracy, init_mlp, mlp_graph, mlp_logits, predict
from ..tensor_core import ContractError, Graph, Matrix, backward

Split = Tuple[Matrix, np.ndarray]

KINDS = ("classification", "fact-edit")


@dataclass(frozen=True, eq=False)
class TaskBundle:
    kind: str
    seed: int
    pretrain_split: Split
    adapt_split: Split
    locality_split: Split
    dims: Tuple[int, ...]
    adapt_eval_split: Optional[Split] = None
    teacher: Optional[List[Matrix]] = None
    params: Dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.dims[-1]


def _split(x: Matrix, y) -> Split:
    return np.ascontiguousarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64)


def subsample(split: Split, fraction: float, seed: int) -> Split:
    """Seeded subset keeping ``max(1, round(fraction * n))`` items in original order."""
    if not 0.0 < fraction <= 1.0:
        raise ContractError(f"fraction must be in (0, 1], got {fraction}")
    x, y = split
    n = x.shape[1]
    k = max(1, int(round(fraction * n)))
    if k == n:
        return split
    idx = np.sort(np.random.default_rng([seed, 0x5AB]).choice(n, size=k, replace=False))
    return x[:, idx], y[idx]


def _balanced_teacher(dims: Sequence[int], seed: int, ref: Matrix, iters: int = 300) -> List[Matrix]:
    """Random two-layer teacher whose argmax classes are roughly equally frequent on ``ref``.

    A raw random network labels most inputs with one or two classes.  Per-class
    logit offsets are fitted on ``ref`` and folded into the weights as an extra
    hidden unit reading the constant bias feature, so the teacher stays a plain
    bias-free MLP.
    """
    d, h, c = dims
    w1, w2 = init_mlp([d, h, c], seed)
    logits = mlp_logits([w1, w2], ref)
    scale = float(np.std(logits))
    off = np.zeros(c)
    for _ in range(iters):
        freq = np.bincount(np.argmax(logits + off[:, None], axis=0), minlength=c) / ref.shape[1]
        off -= 0.5 * scale * (freq - 1.0 / c)
    unit = np.zeros((1, d))
    unit[0, -1] = 1.0
    return [np.vstack([w1, unit]), np.hstack([w2, off[:, None]])]


def gen_classification_task(
    seed: int,
    input_dim: int = 16,
    num_classes: int = 4,
    n_pretrain: int = 2000,
    n_adapt: int = 400,
    hidden: int = 64,
    teacher_hidden: int = 32,
    n_eval: int = 1000,
    n_novel: int = 4,
    shift: float = 1.0,
) -> TaskBundle:
    """Teacher-labelled Gaussian inputs; the adaptation region switches on new features.

    The teacher's classes are balanced on the pre-train distribution.

    The last input feature is a constant 1 (first-layer bias).  The
    ``n_novel`` features before it are identically zero in the pre-train
    and locality splits and ``N(shift, 1)`` in the adaptation splits, so
    the base model has never seen them and must be fine-tuned.
    """
    if min(input_dim, num_classes, n_pretrain, n_adapt, hidden, teacher_hidden, n_eval) < 1:
        raise ContractError("task dimensions must be positive")
    if not 0 <= n_novel <= input_dim - 2:
        raise ContractError("n_novel must leave at least one ordinary feature and the bias")
    rng = np.random.default_rng([seed, 1])
    teacher_seed = int(rng.integers(2**31))
    novel = slice(input_dim - 1 - n_novel, input_dim - 1)

    def inputs(n, adapt):
        x = rng.standard_normal((input_dim, n))
        if adapt:
            x[novel] += shift
        else:
            x[novel] = 0.0
        x[-1] = 1.0
        return x

    # classes balanced on the pre-train distribution
    teacher = _balanced_teacher((input_dim, teacher_hidden, num_classes), teacher_seed,
                                inputs(5000, False))

    def sample(n, adapt):
        x = inputs(n, adapt)
        return _split(x, predict(teacher, x))

    pre = sample(n_pretrain, False)
    adapt = sample(n_adapt, True)
    loc = sample(n_eval, False)
    adapt_eval = sample(n_eval, True)
    return TaskBundle(
        kind="classification",
        seed=seed,
        pretrain_split=pre,
        adapt_split=adapt,
        locality_split=loc,
        dims=(input_dim, hidden, num_classes),
        adapt_eval_split=adapt_eval,
        teacher=teacher,
        params=dict(
            input_dim=input_dim, num_classes=num_classes, n_pretrain=n_pretrain,
            n_adapt=n_adapt, hidden=hidden, teacher_hidden=teacher_hidden,
            n_eval=n_eval, n_novel=n_novel, shift=shift,
        ),
    )


def gen_fact_edit_task(
    seed: int,
    n_facts: int = 200,
    n_edit: int = 10,
    key_dim: int = 32,
    num_values: int = 16,
    hidden: int = 128,
    key_active: Optional[int] = None,
) -> TaskBundle:
    """Random keys mapped to random value classes.

    With ``key_active`` set, each key has only that many nonzero features
    (a toy "subject made of a few tokens"); otherwise keys are dense.
    Keys are scaled to norm ``sqrt(key_dim)``.
    """
    if not 0 <= n_edit < n_facts:
        raise ContractError(f"need 0 <= n_edit < n_facts, got n_edit={n_edit}, n_facts={n_facts}")
    if min(key_dim, num_values, hidden) < 1 or num_values < 2:
        raise ContractError("task dimensions must be positive (and num_values >= 2)")
    rng = np.random.default_rng([seed, 2])
    keys = rng.standard_normal((key_dim, n_facts))
    if key_active is not None:
        if not 1 <= key_active <= key_dim:
            raise ContractError("key_active must be in [1, key_dim]")
        support = np.zeros_like(keys)
        for j in range(n_facts):
            support[rng.choice(key_dim, size=key_active, replace=False), j] = 1.0
        keys *= support
    keys /= np.linalg.norm(keys, axis=0, keepdims=True)
    keys *= np.sqrt(key_dim)
    values = rng.integers(num_values, size=n_facts)
    edited = np.sort(rng.choice(n_facts, size=n_edit, replace=False))
    kept = np.setdiff1d(np.arange(n_facts), edited)
    # new value is always different from the old one
    new_values = (values[edited] + rng.integers(1, num_values, size=n_edit)) % num_values
    return TaskBundle(
        kind="fact-edit",
        seed=seed,
        pretrain_split=_split(keys, values),
        adapt_split=_split(keys[:, edited], new_values),
        locality_split=_split(keys[:, kept], values[kept]),
        dims=(key_dim, hidden, num_values),
        params=dict(
            n_facts=n_facts, n_edit=n_edit, key_dim=key_dim, num_values=num_values,
            hidden=hidden, key_active=key_active, edited=edited.tolist(),
        ),
    )


def pretrain_mlp(
    dims: Sequence[int],
    data: Split,
    seed: int,
    steps: int = 2000,
    lr: float = 0.1,
    momentum: float = 0.9,
    batch_size: int = 64,
) -> List[Matrix]:
    """Full-weight SGD with heavy-ball momentum; stands in for the pre-trained model."""
    x, y = data
    n = x.shape[1]
    weights = init_mlp(dims, seed)
    velocity = [np.zeros_like(w) for w in weights]
    rng = np.random.default_rng([seed, 3])
    bs = min(batch_size, n)
    order, pos = rng.permutation(n), 0
    for _ in range(steps):
        if pos + bs > n:
            order, pos = rng.permutation(n), 0
        idx = order[pos:pos + bs]
        pos += bs
        g = Graph()
        leaves = [g.leaf(w) for w in weights]
        loss = g.softmax_ce(mlp_graph(g, leaves, g.const(x[:, idx])), y[idx])
        grads = backward(g, loss)
        for i, leaf in enumerate(leaves):
            velocity[i] = momentum * velocity[i] - lr * grads[leaf]
            weights[i] = weights[i] + velocity[i]
    return weights


def pretrain_base(task: TaskBundle, steps: Optional[int] = None, lr: Optional[float] = None) -> List[Matrix]:
    """Deterministic base model for ``task`` (seeded by the task seed)."""
    if task.kind == "fact-edit":
        steps = 3000 if steps is None else steps
        lr = 0.05 if lr is None else lr
        bs = task.pretrain_split[0].shape[1]
    else:
        steps = 2000 if steps is None else steps
        lr = 0.05 if lr is None else lr
        bs = 64
    return pretrain_mlp(task.dims, task.pretrain_split, seed=task.seed + 7919, steps=steps, lr=lr, batch_size=bs)


def base_accuracy(weights: Sequence[Matrix], split: Split) -> float:
    return accuracy(weights, *split)
