"""Dense float64 tensors with reverse-mode automatic differentiation.

Graphs are built eagerly: every operation computes its value immediately and
records its parents, so creation order is already a topological order.
``backward`` replays that order in reverse with a fixed accumulation order,
which keeps gradients bit-reproducible across runs.

The op set is deliberately small: exactly what a convolutional text
classifier with interval bound propagation needs. Any NaN or Inf produced by
an op is an immediate error; bound comparisons downstream must never see one.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "parameter",
    "add",
    "add_n",
    "sub",
    "mul",
    "neg",
    "matmul",
    "relu",
    "abs_",
    "max_along",
    "sum_all",
    "concat",
    "windows",
    "softmax",
    "cross_entropy_with_logits",
    "backward",
    "finite_diff_check",
]

_creation_counter = itertools.count()


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode.

    ``requires_grad`` marks trainable leaves and propagates through ops.
    ``name`` labels leaves so ``backward`` can return gradients by name.
    """

    __slots__ = ("data", "name", "requires_grad", "grad", "_parents", "_backward", "_order")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple = (),
        _backward: Callable | None = None,
    ):
        arr = _as_array(data)
        if not np.isfinite(arr).all():
            raise FloatingPointError(f"non-finite values in tensor {name or '<anon>'}")
        self.data = arr
        self.name = name
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self._order = next(_creation_counter)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name: str) -> Tensor:
    """A named trainable leaf."""
    return Tensor(data, requires_grad=True, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape of a broadcast operand."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data, _parents=(a, b))
    out._backward = lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))
    return out


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of same-shaped tensors as a single node (used for batch losses)."""
    if not tensors:
        raise ValueError("add_n needs at least one tensor")
    out = Tensor(sum(t.data for t in tensors), _parents=tuple(tensors))
    out._backward = lambda g: tuple(g for _ in tensors)
    return out


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data - b.data, _parents=(a, b))
    out._backward = lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data * b.data, _parents=(a, b))
    out._backward = lambda g: (
        _unbroadcast(g * b.data, a.data.shape),
        _unbroadcast(g * a.data, b.data.shape),
    )
    return out


def neg(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(-a.data, _parents=(a,))
    out._backward = lambda g: (-g,)
    return out


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ValueError("matmul supports 1-D and 2-D operands only")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def bw(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:  # (k,) @ (k,n) -> (n,)
            return g @ bd.T, np.outer(ad, g)
        if bd.ndim == 1:  # (m,k) @ (k,) -> (m,)
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    out._backward = bw
    return out


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0.0
    out = Tensor(np.where(mask, a.data, 0.0), _parents=(a,))
    out._backward = lambda g: (g * mask,)
    return out


def abs_(a) -> Tensor:
    a = _wrap(a)
    sign = np.sign(a.data)
    out = Tensor(np.abs(a.data), _parents=(a,))
    out._backward = lambda g: (g * sign,)
    return out


def max_along(a, axis: int) -> Tensor:
    """Max reduction along one axis; gradient routes to the first maximum."""
    a = _wrap(a)
    idx = np.expand_dims(a.data.argmax(axis=axis), axis)
    out = Tensor(np.take_along_axis(a.data, idx, axis=axis).squeeze(axis), _parents=(a,))

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    out._backward = bw
    return out


def sum_all(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data.sum(), _parents=(a,))
    out._backward = lambda g: (np.broadcast_to(g, a.data.shape).copy(),)
    return out


def concat(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ValueError("concat supports 1-D tensors only")
    na = a.data.shape[0]
    out = Tensor(np.concatenate([a.data, b.data]), _parents=(a, b))
    out._backward = lambda g: (g[:na], g[na:])
    return out


def windows(a, size: int) -> Tensor:
    """Sliding windows of ``size`` rows, flattened: (T, d) -> (T-size+1, size*d)."""
    a = _wrap(a)
    t, d = a.data.shape
    if size < 1 or size > t:
        raise ValueError(f"window size {size} invalid for {t} rows")
    view = np.lib.stride_tricks.sliding_window_view(a.data, (size, d))[:, 0]
    out = Tensor(view.reshape(t - size + 1, size * d), _parents=(a,))

    def bw(g):
        gr = g.reshape(t - size + 1, size, d)
        full = np.zeros_like(a.data)
        for j in range(size):
            full[j : j + t - size + 1] += gr[:, j, :]
        return (full,)

    out._backward = bw
    return out


def softmax(a) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 1:
        raise ValueError("softmax expects a 1-D tensor")
    z = a.data - a.data.max()
    e = np.exp(z)
    p = e / e.sum()
    out = Tensor(p, _parents=(a,))
    out._backward = lambda g: (p * (g - np.dot(g, p)),)
    return out


def cross_entropy_with_logits(logits, target: int) -> Tensor:
    """Stable softmax cross-entropy of a 1-D logit vector against a class id."""
    logits = _wrap(logits)
    if logits.data.ndim != 1:
        raise ValueError("cross_entropy_with_logits expects a 1-D logit vector")
    n = logits.data.shape[0]
    if not 0 <= target < n:
        raise ValueError(f"target {target} out of range for {n} classes")
    m = logits.data.max()
    lse = m + np.log(np.exp(logits.data - m).sum())
    out = Tensor(lse - logits.data[target], _parents=(logits,))

    def bw(g):
        p = np.exp(logits.data - lse)
        p[target] -= 1.0
        return (g * p,)

    out._backward = bw
    return out


def backward(root: Tensor, seed=None) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of ``root`` with respect to every named tensor.

    ``seed`` is the upstream gradient at the root (defaults to ones, i.e. the
    gradient of ``sum(root)``). Gradients are also left on ``tensor.grad`` for
    every node visited. Accumulation order is the reverse creation order, so
    repeated calls on an identical graph produce identical bits.
    """
    if seed is None:
        seed_arr = np.ones_like(root.data)
    else:
        seed_arr = _as_array(seed)
        if seed_arr.shape != root.data.shape:
            raise ValueError(f"seed shape {seed_arr.shape} != root shape {root.data.shape}")
        if not np.isfinite(seed_arr).all():
            raise FloatingPointError("non-finite backward seed")
    if not root.requires_grad:
        return {}

    nodes: list[Tensor] = []
    seen = {id(root)}
    stack = [root]
    while stack:
        node = stack.pop()
        nodes.append(node)
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    nodes.sort(key=lambda t: t._order, reverse=True)

    grads: dict[int, np.ndarray] = {id(root): seed_arr.copy()}
    for node in nodes:
        g = grads.get(id(node))
        if g is None:
            continue
        node.grad = g
        if node._backward is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad or pg is None:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg
    return {n.name: n.grad for n in nodes if n.name is not None and n.grad is not None}


def finite_diff_check(fn, point, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps a flat float64 vector to ``(value, gradient)`` where the
    gradient is analytic. Relative error per coordinate is
    ``|a - d| / (|a| + |d| + 1e-6)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = _as_array(point).ravel()
    value, grad = fn(point)
    if not np.isfinite(value):
        raise FloatingPointError("non-finite function value at the check point")
    grad = _as_array(grad).ravel()
    if grad.shape != point.shape:
        raise ValueError("analytic gradient shape does not match the point")
    numeric = np.empty_like(point)
    for i in range(point.size):
        shifted = point.copy()
        shifted[i] = point[i] + step
        hi, _ = fn(shifted)
        shifted[i] = point[i] - step
        lo, _ = fn(shifted)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError("non-finite function value during differencing")
        numeric[i] = (hi - lo) / (2.0 * step)
    rel = np.abs(grad - numeric) / (np.abs(grad) + np.abs(numeric) + 1e-6)
    return float(rel.max()) if rel.size else 0.0
