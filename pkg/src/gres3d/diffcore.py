"""Small reverse-mode autodiff over dense float64 numpy arrays.

Every op builds a new :class:`Tensor` holding its parents and a closure that
pushes the output gradient back to them.  :class:`Tape` orders the graph
reachable from a scalar root and replays the closures in reverse.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ComputationError(ArithmeticError):
    """Raised when a value that must be finite is not."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> "Tape":
        tape = Tape(self)
        tape.backward()
        return tape

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    # Only wire the graph when something upstream needs a gradient.
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tape:
    """Topologically ordered record of the ops that produced ``root``.

    Nodes are kept in execution order (parents before children);
    :meth:`backward` walks them in reverse, visiting each exactly once.
    """

    def __init__(self, root: Tensor):
        self.root = root
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
            for p in reversed(node._parents):
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.nodes = order

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if not n._parents]

    def backward(self) -> None:
        if self.root.data.size != 1:
            raise ValueError("backward needs a scalar root")
        if not np.all(np.isfinite(self.root.data)):
            raise ComputationError("non-finite value at backward root")
        for node in self.nodes:
            node.grad = None
        self.root.grad = np.ones_like(self.root.data)
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / b.data**2, b.shape))

    return _make(a.data / b.data, (a, b), back)


def matmul(a, b) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), back)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: _accum(a, g.T))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(old)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: _accum(a, g * mask))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * out * (1.0 - out)))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * out))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: _accum(a, g / a.data))


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), shape))

    return _make(a.data.sum(axis=axis), (a,), back)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def take_rows(a, idx) -> Tensor:
    """Rows ``a[idx]``; repeated indices accumulate in backward."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(a.data[idx], (a,), back)


def take(a, idx) -> Tensor:
    """Entries of a 1-D tensor at ``idx``."""
    return take_rows(a, idx)


def segment_mean(a, segment_ids, n_segments: int) -> Tensor:
    """Row means of ``a`` grouped by ``segment_ids`` (every segment non-empty)."""
    a = as_tensor(a)
    ids = np.asarray(segment_ids, dtype=np.intp)
    counts = np.bincount(ids, minlength=n_segments).astype(np.float64)
    if counts.shape[0] != n_segments or np.any(counts == 0):
        raise ValueError("segment_mean: every segment needs at least one row")
    out = np.zeros((n_segments,) + a.shape[1:])
    np.add.at(out, ids, a.data)
    out /= counts.reshape((-1,) + (1,) * (a.data.ndim - 1))

    def back(g):
        _accum(a, (g / counts.reshape((-1,) + (1,) * (g.ndim - 1)))[ids])

    return _make(out, (a,), back)


def softmax_rows(x) -> Tensor:
    """Row-wise softmax with the row max subtracted first."""
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise ComputationError("softmax_rows received NaN input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        _accum(x, out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return _make(out, (x,), back)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))
    out = x.data - lse
    soft = np.exp(out)

    def back(g):
        _accum(x, g - soft * g.sum(axis=axis, keepdims=True))

    return _make(out, (x,), back)


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy; ``logits`` pass through a sigmoid."""
    logits = as_tensor(logits)
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    x = logits.data
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
        raise ComputationError("bce_with_logits received non-finite input")
    out = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    p = _sigmoid(x)
    return _make(out, (logits,), lambda g: _accum(logits, g * (p - t)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# layers


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def mlp_forward(x, layers: Sequence[tuple], nonlinearity: Callable = relu) -> Tensor:
    """Affine layers with ``nonlinearity`` between them; the last stays affine.

    ``layers`` is a list of ``(weight, bias)`` pairs, weights stored in-by-out.
    """
    h = as_tensor(x)
    for i, (w, b) in enumerate(layers):
        h = linear(h, w, b)
        if i < len(layers) - 1:
            h = nonlinearity(h)
    return h


# ---------------------------------------------------------------------------
# verification


def grad_check(fn: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-5) -> float:
    """Worst relative error between reverse-mode and central-difference gradients.

    ``fn`` rebuilds the scalar from the current contents of ``params`` on
    every call; entries are perturbed in place and restored.
    """
    params = list(params)
    root = fn()
    if not np.all(np.isfinite(root.data)):
        raise ComputationError("grad_check: non-finite loss")
    for p in params:
        p.grad = None
    root.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            fp = fn().item()
            flat[k] = orig - step
            fm = fn().item()
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ComputationError("grad_check: non-finite loss under perturbation")
            numeric = (fp - fm) / (2.0 * step)
            a = analytic.reshape(-1)[k]
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
