"""Bias-free MLPs ``logits = W_L relu(... relu(W_1 x))`` on column-major batches.

Inputs are (features, samples); logits are (classes, samples).
"""
from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .tensor_core import Graph, Matrix, Node


def mlp_graph(g: Graph, weights: Sequence[Node], x: Node) -> Node:
    h = x
    for i, w in enumerate(weights):
        h = g.matmul(w, h)
        if i < len(weights) - 1:
            h = g.relu(h)
    return h


def mlp_logits(weights: Sequence[Matrix], x: Matrix) -> Matrix:
    h = x
    for i, w in enumerate(weights):
        h = w @ h
        if i < len(weights) - 1:
            h = np.maximum(h, 0.0)
    return h


def predict(weights: Sequence[Matrix], x: Matrix) -> np.ndarray:
    return np.argmax(mlp_logits(weights, x), axis=0)


def accuracy(weights: Sequence[Matrix], x: Matrix, y) -> float:
    y = np.asarray(y)
    if y.size == 0:
        return 1.0
    return float(np.mean(predict(weights, x) == y))


def init_mlp(dims: Sequence[int], seed: int) -> List[Matrix]:
    """He-initialized weights for layer sizes ``dims`` (input first)."""
    rng = np.random.default_rng(seed)
    return [
        rng.standard_normal((d_out, d_in)) * np.sqrt(2.0 / d_in)
        for d_in, d_out in zip(dims[:-1], dims[1:])
    ]
