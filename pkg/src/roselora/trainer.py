"""Sparse low-rank fine-tuning loop: SGD step, sensitivity update, row/column prune.

One step, in order:

1. forward/backward through the MLP with effective weights ``W0 + B A``;
2. instantaneous sensitivity from the *pre-update* factors and their grads;
3. EMA update of the sensitivity;
4. plain SGD on ``A`` and ``B``;
5. top-k prune of each row of ``A`` / column of ``B`` at the scheduled keep;
6. optional Frobenius clip of both factors (knowledge-editing variant).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .adapter import LoraAdapter, effective_weight, init_adapter
from .model import mlp_graph
from .pruner import SparsitySchedule, keep_fraction_at, prune_adapter
from .sensitivity import SensitivityState, init_state, instantaneous_sensitivity, update_ema
from .tensor_core import ContractError, Graph, Matrix, backward

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; carries the last finite adapter/state set."""

    def __init__(self, message, step, adapters=None, states=None):
        super().__init__(message)
        self.step = step
        self.adapters = adapters
        self.states = states


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    schedule: SparsitySchedule
    beta: float = 0.8
    edit_alpha: Optional[float] = None
    batch_size: int = 32
    seed: int = 0
    rank: int = 4

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if self.edit_alpha is not None and not self.edit_alpha > 0:
            raise ContractError("edit_alpha must be positive when set")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.rank < 1:
            raise ContractError("rank must be >= 1")


@dataclass(frozen=True)
class StepReport:
    step: int
    loss: float
    keep_fraction: float
    delta_sparsity: float
    a_frob_sq: float
    b_frob_sq: float

    FIELDS = ("step", "loss", "keep_fraction", "delta_sparsity", "a_frob_sq", "b_frob_sq")


@dataclass
class TrainResult:
    adapters: List[LoraAdapter]
    states: List[SensitivityState]
    reports: List[StepReport] = field(default_factory=list)

    def __iter__(self):
        # allow ``adapters, reports = train(...)``
        return iter((self.adapters, self.reports))


def clip_frobenius(m: Matrix, alpha: float) -> Matrix:
    """Rescale ``m`` so that ``||m||_F^2 <= alpha``, preserving direction."""
    if not alpha > 0:
        raise ContractError("alpha must be positive")
    sq = float(np.sum(m * m))
    if sq <= alpha:
        return m
    return m * (np.sqrt(alpha) / np.sqrt(sq))


def _frob_sq(m: Matrix) -> float:
    return float(np.sum(m * m))


def loss_and_grads(adapters: Sequence[LoraAdapter], x: Matrix, y):
    """Mean cross-entropy of the adapted MLP and grads w.r.t. every ``A`` and ``B``."""
    g = Graph()
    xs = g.const(x)
    a_nodes, b_nodes, weights = [], [], []
    for ad in adapters:
        a = g.leaf(ad.a)
        b = g.leaf(ad.b)
        weights.append(g.add(g.const(ad.w0), g.matmul(b, a)))
        a_nodes.append(a)
        b_nodes.append(b)
    loss = g.softmax_ce(mlp_graph(g, weights, xs), y)
    grads = backward(g, loss)
    return (
        float(loss.value[0, 0]),
        [grads[n] for n in a_nodes],
        [grads[n] for n in b_nodes],
    )


def roselora_step(
    adapters: Sequence[LoraAdapter],
    states: Sequence[SensitivityState],
    cfg: TrainConfig,
    batch: Tuple[Matrix, np.ndarray],
    t: int,
    loss_fn=loss_and_grads,
):
    """Advance every adapted layer by one step.  Returns ``(adapters, states, report)``.

    ``loss_fn(adapters, x, y) -> (loss, grads_a, grads_b)`` defaults to the
    MLP cross-entropy.
    """
    if len(adapters) != len(states):
        raise ContractError("one sensitivity state per adapter required")
    keep = keep_fraction_at(cfg.schedule, t)
    x, y = batch
    loss, grads_a, grads_b = loss_fn(adapters, x, y)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss} at step {t}", t, list(adapters), list(states))

    lr = cfg.learning_rate
    new_adapters, new_states = [], []
    for ad, st, ga, gb in zip(adapters, states, grads_a, grads_b):
        st = update_ema(
            st,
            instantaneous_sensitivity(ad.a, ga),
            instantaneous_sensitivity(ad.b, gb),
        )
        stepped = replace(ad, a=ad.a - lr * ga, b=ad.b - lr * gb)
        stepped = prune_adapter(stepped, st, keep)
        if cfg.edit_alpha is not None:
            stepped = replace(
                stepped,
                a=clip_frobenius(stepped.a, cfg.edit_alpha),
                b=clip_frobenius(stepped.b, cfg.edit_alpha),
            )
        new_adapters.append(stepped)
        new_states.append(st)

    report = StepReport(
        step=t,
        loss=loss,
        keep_fraction=keep,
        delta_sparsity=aggregate_delta_sparsity(new_adapters),
        a_frob_sq=max(_frob_sq(ad.a) for ad in new_adapters),
        b_frob_sq=max(_frob_sq(ad.b) for ad in new_adapters),
    )
    return new_adapters, new_states, report


def aggregate_delta_sparsity(adapters: Sequence[LoraAdapter]) -> float:
    zeros = total = 0
    for ad in adapters:
        d = ad.b @ ad.a
        zeros += int(np.count_nonzero(d == 0.0))
        total += d.size
    return zeros / total


def init_adapters(base_weights: Sequence[Matrix], rank: int, seed: int) -> List[LoraAdapter]:
    out = []
    for i, w in enumerate(base_weights):
        r = min(rank, *w.shape)
        out.append(init_adapter(w, r, seed=int(np.random.SeedSequence([seed, i]).generate_state(1)[0])))
    return out


def batch_indices(n: int, batch_size: int, steps: int, seed: int) -> Iterator[np.ndarray]:
    """Epoch-wise reshuffled mini-batch indices; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    bs = min(batch_size, n)
    order = rng.permutation(n)
    pos = 0
    for _ in range(steps):
        if pos + bs > n:
            order = rng.permutation(n)
            pos = 0
        yield order[pos:pos + bs]
        pos += bs


def train(
    base_weights: Sequence[Matrix],
    data: Tuple[Matrix, np.ndarray],
    cfg: TrainConfig,
    steps: Optional[int] = None,
    adapters: Optional[Sequence[LoraAdapter]] = None,
) -> TrainResult:
    """Fine-tune low-rank adapters on every layer of a frozen MLP.

    ``data`` is ``(inputs, labels)`` with inputs laid out (features, samples).
    Runs ``cfg.schedule.total_steps`` steps unless ``steps`` is given.
    """
    x, y = data
    y = np.asarray(y)
    n = x.shape[1]
    if n == 0:
        raise ContractError("training data is empty")
    total = cfg.schedule.total_steps if steps is None else steps
    if adapters is None:
        adapters = init_adapters(base_weights, cfg.rank, cfg.seed)
    adapters = list(adapters)
    states = [init_state(ad, cfg.beta) for ad in adapters]
    reports = []
    for t, idx in enumerate(batch_indices(n, cfg.batch_size, total, cfg.seed), start=1):
        adapters, states, rep = roselora_step(adapters, states, cfg, (x[:, idx], y[idx]), t)
        reports.append(rep)
        if t % 100 == 0:
            log.debug("step %d loss %.4g keep %.3f", t, rep.loss, rep.keep_fraction)
    return TrainResult(adapters, states, reports)


def adapted_weights(adapters: Sequence[LoraAdapter]) -> List[Matrix]:
    return [effective_weight(ad) for ad in adapters]
