"""Reverse-mode automatic differentiation over numpy arrays.

A small tape-based engine: every operation returns a new :class:`Tensor`
holding a float64 array, the producing op's backward closure, and links to
its parents. Calling ``backward()`` on a scalar output walks the graph in
reverse topological order and accumulates gradients into every tensor
created with ``requires_grad=True``.

Shapes are arbitrary; matmul follows numpy's batched ``@`` semantics and
elementwise ops broadcast, with gradients summed back down to each
operand's shape. All math is double precision so analytic gradients can be
validated against central finite differences.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True

# Logit value used to disable masked positions inside softmax. Large enough
# that exp(x - max) underflows to exactly 0 for any finite unmasked logit.
MASKED_LOGIT = -1e30


@contextmanager
def no_grad():
    """Disable graph construction inside the block (pure inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor (defaults to d(out)/d(out) = 1)."""
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        if grad is None:
            grad = np.ones_like(self.data)
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return tensor_max(self, axis=axis, keepdims=keepdims)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, rng: np.random.Generator | None = None, scale: float | None = None) -> Tensor:
    """Trainable tensor. With ``rng``, draws N(0, scale^2); else wraps data."""
    if rng is not None:
        shape = tuple(data) if isinstance(data, (tuple, list)) else (int(data),)
        if scale is None:
            scale = 1.0 / np.sqrt(shape[-1] if len(shape) > 1 else shape[0])
        arr = rng.normal(0.0, scale, size=shape)
        return Tensor(arr, requires_grad=True)
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap an op result; record the tape only when gradients can flow."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._backward = backward
        return out
    return Tensor(data)


def custom_op(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Public entry for domain ops with hand-written backward closures.

    ``backward`` is called with the output tensor once its ``grad`` is
    final, and must accumulate into each parent via ``_accumulate``.
    """
    def runner():
        backward(out)

    out = _make(np.asarray(data, dtype=np.float64), parents, runner)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic --------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    out = _make(out_data, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    out = _make(out_data, (a, b), backward)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    out_data = a.data @ b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    out = _make(out_data, (a, b), backward)
    return out


# -- elementwise nonlinearities ----------------------------------------


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * (1.0 - y * y))

    out = _make(y, (a,), backward)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    y = np.maximum(a.data, 0.0)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * (a.data > 0.0))

    out = _make(y, (a,), backward)
    return out


def identity(a) -> Tensor:
    """Stand-in activation used by the linear-probe gradient check."""
    return as_tensor(a)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * y)

    out = _make(y, (a,), backward)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    y = np.log(a.data)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad / a.data)

    out = _make(y, (a,), backward)
    return out


# -- shape ops ----------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.reshape(a.data.shape))

    out = _make(out_data, (a,), backward)
    return out


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.transpose(axes)

    def backward():
        if a.requires_grad:
            if axes is None:
                a._accumulate(out.grad.transpose())
            else:
                inv = np.argsort(axes)
                a._accumulate(out.grad.transpose(inv))

    out = _make(out_data, (a,), backward)
    return out


def take(a, key) -> Tensor:
    """Indexing/gather: supports basic slices and integer-array keys."""
    a = as_tensor(a)
    out_data = a.data[key]

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, key, out.grad)
            a._accumulate(g)

    out = _make(out_data, (a,), backward)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = out.grad
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    out = _make(out_data, tuple(tensors), backward)
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward():
        g = out.grad
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    out = _make(out_data, tuple(tensors), backward)
    return out


# -- reductions ----------------------------------------------------------


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward():
        if not a.requires_grad:
            return
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    out = _make(out_data, (a,), backward)
    return out


def tensor_max(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction routing the gradient to the first argmax (ties broken
    toward the lowest index, deterministically)."""
    a = as_tensor(a)
    out_data = a.data.max(axis=axis, keepdims=keepdims)

    def backward():
        if not a.requires_grad:
            return
        g = out.grad
        if axis is None:
            mask = np.zeros_like(a.data)
            mask[np.unravel_index(np.argmax(a.data), a.data.shape)] = 1.0
            a._accumulate(mask * g)
            return
        idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
        mask = np.zeros_like(a.data)
        np.put_along_axis(mask, idx, 1.0, axis=axis)
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(mask * g)

    out = _make(out_data, (a,), backward)
    return out


# -- softmax family ------------------------------------------------------


def softmax(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax; ``mask`` (broadcastable, True=keep)
    excludes positions exactly (their probability underflows to 0)."""
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        x = np.where(mask, x, MASKED_LOGIT)
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward():
        if a.requires_grad:
            g = out.grad
            dot = (p * g).sum(axis=axis, keepdims=True)
            a._accumulate(p * (g - dot))

    out = _make(p, (a,), backward)
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    y = x - lse

    def backward():
        if a.requires_grad:
            g = out.grad
            p = np.exp(y)
            a._accumulate(g - p * g.sum(axis=axis, keepdims=True))

    out = _make(y, (a,), backward)
    return out


def cross_entropy(scores: Tensor, target: int) -> Tensor:
    """Softmax cross-entropy of a 1-D score vector at the gold index.

    Gradient w.r.t. scores is softmax(scores) - onehot(target).
    """
    if scores.ndim != 1:
        raise ValueError("cross_entropy expects a 1-D score vector")
    return -log_softmax(scores, axis=0)[target]
