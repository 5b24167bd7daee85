"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray and records the operations that produced it on a
tape of parent links; ``backward()`` walks the tape in reverse topological
order and accumulates gradients into ``.grad``. Only the operations the
navigation model needs are implemented; broadcasting is supported for
elementwise ops and undone on the way back by summing over broadcast axes.

Double precision is the default dtype. Training code may build float32
tensors; gradients follow the dtype of the forward values.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape construction inside the block (rollouts, evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing -----------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of this (scalar unless grad given) into leaves."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and (p.requires_grad or p._parents):
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not (p.requires_grad or p._parents):
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _scalar_like(x, dtype) -> np.ndarray:
    """Wrap x as an array; bare float scalars adopt the partner's dtype so
    float32 graphs are not silently promoted to float64."""
    arr = np.asarray(x)
    if arr.ndim == 0 and arr.dtype.kind == "f" and np.dtype(dtype).kind == "f":
        return arr.astype(dtype)
    return arr


def _pair(a, b) -> tuple[Tensor, Tensor]:
    a_is, b_is = isinstance(a, Tensor), isinstance(b, Tensor)
    if a_is and not b_is:
        return a, Tensor(_scalar_like(b, a.data.dtype))
    if b_is and not a_is:
        return Tensor(_scalar_like(a, b.data.dtype)), b
    if not a_is and not b_is:
        return as_tensor(a), as_tensor(b)
    return a, b


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient g down to the given (possibly broadcast-from) shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _node(out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def backward(g):
        return (g * mask,)

    return _node(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _node(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _node(out, (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _node(out, (x,), backward)


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)

    def backward(g):
        return (g / x.data,)

    return _node(out, (x,), backward)


def square(x: Tensor) -> Tensor:
    out = x.data * x.data

    def backward(g):
        return (g * 2.0 * x.data,)

    return _node(out, (x,), backward)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; at ties the gradient goes to the first argument."""
    a, b = _pair(a, b)
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)

    def backward(g):
        return (_unbroadcast(g * take_a, a.data.shape),
                _unbroadcast(g * ~take_a, b.data.shape))

    return _node(out, (a, b), backward)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def backward(g):
        return (g * inside,)

    return _node(out, (x,), backward)


# -- shape ------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(old),)

    return _node(out, (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    out = np.transpose(x.data, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inv),)

    return _node(out, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), backward)


def take(x: Tensor, idx) -> Tensor:
    """Basic slicing / integer indexing with scatter-add backward."""
    out = x.data[idx]
    shape = x.data.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, idx, g)
        return (gx,)

    return _node(out, (x,), backward)


# -- reductions ---------------------------------------------------------------

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _node(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.data.shape[a] for a in ax]))
    return mul(sum_(x, axis, keepdims), 1.0 / count)


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2-D operands or stacked 3-D batches (no batch broadcast)."""
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _node(out, (a, b), backward)


# -- fused numerical ops ------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = x.data.shape[-1]

    def backward(g):
        ggamma = _unbroadcast(g * xhat, gamma.data.shape)
        gbeta = _unbroadcast(g, beta.data.shape)
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: tuple[int, int],
           padding: tuple[int, int]) -> Tensor:
    """2-D convolution, NCHW layout, via im2col + GEMM.

    x: (B, Cin, H, W), w: (Cout, Cin, kh, kw), b: (Cout,).
    """
    sy, sx = stride
    py, px = padding
    B, Cin, H, W = x.data.shape
    Cout, _, kh, kw = w.data.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (py, py), (px, px)))
    Hp, Wp = xp.shape[2], xp.shape[3]
    OH = (Hp - kh) // sy + 1
    OW = (Wp - kw) // sx + 1
    cols = np.empty((B, Cin, kh, kw, OH, OW), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sy * OH:sy, j:j + sx * OW:sx]
    cols2 = cols.transpose(0, 4, 5, 1, 2, 3).reshape(B * OH * OW, Cin * kh * kw)
    wmat = w.data.reshape(Cout, -1)
    out = (cols2 @ wmat.T + b.data).reshape(B, OH, OW, Cout).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * OH * OW, Cout)
        gw = (g2.T @ cols2).reshape(w.data.shape)
        gb = g2.sum(axis=0)
        gcols2 = g2 @ wmat
        gcols = gcols2.reshape(B, OH, OW, Cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sy * OH:sy, j:j + sx * OW:sx] += gcols[:, :, i, j]
        gx = gxp[:, :, py:Hp - py if py else Hp, px:Wp - px if px else Wp]
        return gx, gw, gb

    return _node(out, (x, w, b), backward)
