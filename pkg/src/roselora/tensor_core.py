"""Dense float64 matrices and a small tape-based reverse-mode autodiff.

The op set is deliberately tiny: matmul, elementwise add, scalar scale,
ReLU, entrywise mask multiply and a mean softmax cross-entropy that
reduces a (classes x samples) logit matrix to a scalar.  Forward values
are computed eagerly when a node is added; ``backward`` walks the tape in
reverse.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

Matrix = np.ndarray


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


def as_matrix(x, name: str = "matrix") -> Matrix:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must have positive dimensions, got {m.shape}")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def _check_same(a: Matrix, b: Matrix, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def softmax_columns(logits: Matrix) -> Matrix:
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


@dataclass(eq=False)
class Node:
    value: Matrix
    op: str
    inputs: tuple = ()
    vjp: Optional[Callable[[Matrix], Sequence[Optional[Matrix]]]] = None
    name: Optional[str] = None

    @property
    def shape(self):
        return self.value.shape


@dataclass
class Graph:
    """Append-only tape.  Nodes are topologically ordered by construction."""

    nodes: List[Node] = field(default_factory=list)
    output: Optional[Node] = None

    def _push(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    def leaf(self, value, name: Optional[str] = None) -> Node:
        return self._push(Node(as_matrix(value, name or "leaf"), "leaf", name=name))

    def const(self, value) -> Node:
        return self._push(Node(as_matrix(value, "const"), "const"))

    @property
    def leaves(self) -> List[Node]:
        return [n for n in self.nodes if n.op == "leaf"]

    def matmul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value
        return self._push(Node(
            matmul(av, bv), "matmul", (a, b),
            lambda g: (g @ bv.T, av.T @ g),
        ))

    def add(self, a: Node, b: Node) -> Node:
        _check_same(a.value, b.value, "add")
        return self._push(Node(a.value + b.value, "add", (a, b), lambda g: (g, g)))

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._push(Node(c * a.value, "scale", (a,), lambda g: (c * g,)))

    def relu(self, a: Node) -> Node:
        active = a.value > 0
        return self._push(Node(
            np.where(active, a.value, 0.0), "relu", (a,),
            lambda g: (np.where(active, g, 0.0),),
        ))

    def mask(self, a: Node, mask: Matrix) -> Node:
        m = as_matrix(mask, "mask")
        _check_same(a.value, m, "mask")
        return self._push(Node(a.value * m, "mask", (a,), lambda g: (g * m,)))

    def softmax_ce(self, logits: Node, labels) -> Node:
        """Mean cross-entropy; ``logits`` is (classes, n), ``labels`` length n."""
        z = logits.value
        y = np.asarray(labels, dtype=np.int64)
        if y.shape != (z.shape[1],):
            raise ShapeError(f"labels shape {y.shape} does not match {z.shape[1]} samples")
        if y.size and (y.min() < 0 or y.max() >= z.shape[0]):
            raise ContractError("label out of range")
        n = z.shape[1]
        cols = np.arange(n)
        probs = softmax_columns(z)
        shifted = z - z.max(axis=0, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=0))
        loss = float(np.sum(log_norm - shifted[y, cols]) / n)

        def vjp(g):
            d = probs.copy()
            d[y, cols] -= 1.0
            return (d * (g[0, 0] / n),)

        node = Node(np.array([[loss]]), "softmax_ce", (logits,), vjp)
        self.output = node
        return self._push(node)


def backward(g: Graph, output: Optional[Node] = None) -> Dict[Node, Matrix]:
    out = output if output is not None else g.output
    if out is None:
        out = g.nodes[-1] if g.nodes else None
    if out is None or out.value.shape != (1, 1):
        shape = None if out is None else out.value.shape
        raise ContractError(f"backward needs a scalar output node, got shape {shape}")

    grads: Dict[int, Matrix] = {id(out): np.ones((1, 1))}
    index = {id(n): i for i, n in enumerate(g.nodes)}
    for node in reversed(g.nodes[: index[id(out)] + 1]):
        gout = grads.get(id(node))
        if gout is None or node.vjp is None:
            continue
        for inp, gin in zip(node.inputs, node.vjp(gout)):
            if gin is None:
                continue
            prev = grads.get(id(inp))
            grads[id(inp)] = gin if prev is None else prev + gin
    return {
        leaf: grads.get(id(leaf), np.zeros_like(leaf.value))
        for leaf in g.leaves
    }


def finite_diff_grad(f: Callable[[Matrix], float], x: Matrix, eps: float = 1e-5) -> Matrix:
    if eps <= 0:
        raise ContractError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        up = float(f(x))
        x[idx] = orig - eps
        down = float(f(x))
        x[idx] = orig
        grad[idx] = (up - down) / (2 * eps)
    return grad


def relative_error(a: Matrix, b: Matrix) -> float:
    """Norm-wise relative difference, 0 when both are zero."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
