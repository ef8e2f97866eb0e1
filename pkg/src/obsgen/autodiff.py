"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array plus the backward-graph linkage created by the
op that produced it. Calling :func:`backward` on a scalar loss walks the
graph once and accumulates gradients into every reachable tensor that
requires them. Gradients accumulate across repeated backward calls until
cleared, so training loops must zero parameter grads between steps.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError


class Tensor:
    """Dense float64 array with optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], list] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # Arithmetic sugar; constants are wrapped as non-grad tensors.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


class Parameter(Tensor):
    """Trainable leaf tensor."""

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _scalar(g) -> float:
    return float(np.asarray(g).reshape(-1)[0])


def constant(x) -> Tensor:
    """Non-differentiable tensor (e.g. an additive attention-mask bias)."""
    return Tensor(np.asarray(x, dtype=np.float64))


def _from_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape))]

    return _from_op(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        return [
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        ]

    return _from_op(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _from_op(-a.data, (a,), lambda g: [(a, -g)])


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _from_op(a.data * c, (a,), lambda g: [(a, g * c)])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {a.data.shape} x {b.data.shape}"
        )
    data = a.data @ b.data

    def backward(g):
        return [(a, g @ b.data.T), (b, a.data.T @ g)]

    return _from_op(data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects 2D, got {a.data.shape}")
    return _from_op(np.ascontiguousarray(a.data.T), (a,), lambda g: [(a, g.T)])


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return [(a, g * mask)]

    return _from_op(a.data * mask, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # stable two-sided form
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        return [(a, g * out * (1.0 - out))]

    return _from_op(out, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        return [(a, np.full(a.data.shape, _scalar(g))) ]

    return _from_op(np.array(a.data.sum()), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        return [(a, np.full(a.data.shape, _scalar(g) / n))]

    return _from_op(np.array(a.data.mean()), (a,), backward)


def gather_rows(table: Tensor, indices) -> Tensor:
    """Select rows of a 2D table; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError(f"gather_rows expects 1D indices, got {idx.shape}")
    data = table.data[idx]

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        return [(table, dt)]

    return _from_op(data, (table,), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    data = a.data[start:stop]

    def backward(g):
        da = np.zeros_like(a.data)
        da[start:stop] = g
        return [(a, da)]

    return _from_op(data, (a,), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    data = np.ascontiguousarray(a.data[:, start:stop])

    def backward(g):
        da = np.zeros_like(a.data)
        da[:, start:stop] = g
        return [(a, da)]

    return _from_op(data, (a,), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    data = np.concatenate([p.data for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def backward(g):
        return [(p, g[offsets[i]:offsets[i + 1]]) for i, p in enumerate(parts)]

    return _from_op(data, parts, backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    data = np.concatenate([p.data for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

    def backward(g):
        return [(p, g[:, offsets[i]:offsets[i + 1]]) for i, p in enumerate(parts)]

    return _from_op(data, parts, backward)


def softmax_rows(a: Tensor) -> Tensor:
    probs = kernels.softmax_rows(a.data)

    def backward(g):
        return [(a, kernels.softmax_rows_grad(probs, g))]

    return _from_op(probs, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization (epsilon-stabilized) followed by affine."""
    if x.data.ndim != 2:
        raise DimensionError(f"layer_norm expects 2D input, got {x.data.shape}")
    width = x.data.shape[1]
    if gain.data.shape != (width,) or bias.data.shape != (width,):
        raise DimensionError(
            f"layer_norm gain/bias must have shape ({width},); "
            f"got {gain.data.shape} and {bias.data.shape}"
        )
    out, xhat, inv_std = kernels.layer_norm_rows(x.data, gain.data, bias.data, eps)

    def backward(g):
        dx, dgain, dbias = kernels.layer_norm_rows_grad(g, xhat, inv_std, gain.data)
        return [(x, dx), (gain, dgain), (bias, dbias)]

    return _from_op(out, (x, gain, bias), backward)


def softmax_cross_entropy(logits: Tensor, target_index: int, weight: float = 1.0) -> Tensor:
    """-weight * log softmax(logits)[target_index] for a 1D logit vector."""
    x = logits.data
    if x.ndim != 1:
        raise DimensionError(f"softmax_cross_entropy expects 1D logits, got {x.shape}")
    n = x.shape[0]
    if not 0 <= int(target_index) < n:
        raise IndexError(f"target index {target_index} out of range for {n} logits")
    if weight <= 0:
        raise NumericError(f"cross-entropy weight must be positive, got {weight}")
    t = int(target_index)
    m = x.max()
    lse = m + math.log(np.exp(x - m).sum())
    loss = weight * (lse - x[t])
    probs = np.exp(x - lse)

    def backward(g):
        gs = _scalar(g)
        d = probs * (weight * gs)
        d[t] -= weight * gs
        return [(logits, d)]

    return _from_op(np.array(loss), (logits,), backward)


def cross_entropy_rows(logits: Tensor, targets, weights) -> Tensor:
    """Sum of per-row weighted NLLs; row i scored against targets[i]."""
    x = logits.data
    idx = np.asarray(targets, dtype=np.intp)
    w = np.asarray(weights, dtype=np.float64)
    if x.ndim != 2 or idx.shape != (x.shape[0],) or w.shape != (x.shape[0],):
        raise DimensionError(
            f"cross_entropy_rows: logits {x.shape}, targets {idx.shape}, weights {w.shape}"
        )
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    nll = lse - x[np.arange(x.shape[0]), idx]
    loss = float((w * nll).sum())
    probs = np.exp(x - lse[:, None])

    def backward(g):
        gs = _scalar(g)
        d = probs * (w * gs)[:, None]
        d[np.arange(x.shape[0]), idx] -= w * gs
        return [(logits, d)]

    return _from_op(np.array(loss), (logits,), backward)


def bce_with_logits_sum(logits: Tensor, targets, pos_weight: float = 1.0) -> Tensor:
    """Sum_i of -pos_weight*d*log(sigmoid(x)) - (1-d)*log(1-sigmoid(x))."""
    x = logits.data.reshape(-1)
    d = np.asarray(targets, dtype=np.float64).reshape(-1)
    if x.shape != d.shape:
        raise DimensionError(f"bce shapes differ: {x.shape} vs {d.shape}")
    # log sigmoid(x) = -softplus(-x); log(1 - sigmoid(x)) = -softplus(x)
    softplus = np.logaddexp(0.0, x)
    loss = float((pos_weight * d * np.logaddexp(0.0, -x) + (1.0 - d) * softplus).sum())
    sig = 1.0 / (1.0 + np.exp(-x))

    def backward(g):
        grad = (pos_weight * d * (sig - 1.0) + (1.0 - d) * sig) * _scalar(g)
        return [(logits, grad.reshape(logits.data.shape))]

    return _from_op(np.array(loss), (logits,), backward)


def dropout(a: Tensor, rate: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout: active only in train mode, identity otherwise."""
    if not train or rate <= 0.0:
        return a
    keep = 1.0 - rate
    mask = (rng.random(a.data.shape) < keep) / keep

    def backward(g):
        return [(a, g * mask)]

    return _from_op(a.data * mask, (a,), backward)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order over the parent graph (depth can reach thousands)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad tensor reachable from `loss`.

    Propagation uses per-call local buffers, so repeated calls add one more
    copy of the gradient to each tensor instead of compounding.
    """
    if loss.data.size != 1:
        raise NumericError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise NumericError("loss is not connected to any tensor requiring gradients")
    order = _topo_order(loss)
    local: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = local.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad += g
        if node._backward_fn is None:
            continue
        for parent, pg in node._backward_fn(g):
            if not parent.requires_grad:
                continue
            acc = local.get(id(parent))
            if acc is None:
                local[id(parent)] = np.asarray(pg, dtype=np.float64)
            else:
                acc += pg


def check_finite_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        if p.grad is None:
            raise NumericError(f"parameter {p.name or '<unnamed>'} received no gradient")
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in {p.name or '<unnamed>'}")
