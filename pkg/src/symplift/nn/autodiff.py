"""Tensor-level reverse-mode differentiation.

A :class:`Tensor` wraps a float64 numpy array and remembers the operation that
produced it.  Calling :meth:`Tensor.backward` on a scalar walks the recorded
graph in reverse topological order and accumulates ``.grad`` on every tensor
that requires it.

Only first-order reverse sweeps are supported.  Input Jacobians of networks are
obtained by propagating tangent vectors forward through the *same* recorded
operations (see :mod:`symplift.nn.networks`), so any scalar built from a
Jacobian is still an ordinary node of the graph and can be differentiated with
respect to the parameters.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self, seed: np.ndarray | float | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for all leaves."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar tensor")
            seed = np.ones_like(self.data)
        if not self.requires_grad:
            return
        order = _topological_order(self)
        self.grad = np.broadcast_to(np.asarray(seed, dtype=np.float64), self.shape).copy()
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior gradients are not needed afterwards
                if node._parents:
                    node.grad = None

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    @property
    def mT(self):
        return swapaxes(self, -1, -2)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    live = tuple(p for p in parents if p.requires_grad)
    out.requires_grad = bool(live)
    out._parents = live
    out._backward = backward if live else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementary operations ----------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def square(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(2.0 * g * a.data)

    return _make(a.data * a.data, (a,), backward)


def abs_(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), backward)


def matmul(a, b) -> Tensor:
    """``np.matmul`` semantics, including batch broadcasting (ndim >= 2)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    def backward(g):
        a._accumulate(np.swapaxes(g, i, j))

    return _make(np.swapaxes(a.data, i, j), (a,), backward)


def getitem(a: Tensor, index) -> Tensor:
    """Basic (non-advanced) indexing."""

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a._accumulate(full)

    return _make(a.data[index], (a,), backward)


def take(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather ``a.ravel()[indices]``; gradients of repeated indices add up."""
    indices = np.asarray(indices, dtype=np.intp)
    flat = a.data.reshape(-1)

    def backward(g):
        acc = np.bincount(indices.reshape(-1), weights=g.reshape(-1), minlength=flat.size)
        a._accumulate(acc.reshape(a.shape))

    return _make(flat[indices], (a,), backward)


def concatenate(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, gp in zip(parts, np.split(g, splits, axis=axis)):
            if p.requires_grad:
                p._accumulate(gp)

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]

    def backward(g):
        for k, p in enumerate(parts):
            if p.requires_grad:
                p._accumulate(np.take(g, k, axis=axis))

    return _make(np.stack([p.data for p in parts], axis=axis), parts, backward)


def jt(a: Tensor) -> Tensor:
    """Right-multiply the last axis by the transposed canonical matrix, ``a @ J.T``.

    With ``J = [[0, I], [-I, 0]]`` this maps ``(u, v)`` to ``(v, -u)``.
    """
    n = a.shape[-1] // 2
    if 2 * n != a.shape[-1]:
        raise ValueError("last axis must have even length")

    def backward(g):
        # d(a J^T) = g J
        a._accumulate(np.concatenate([-g[..., n:], g[..., :n]], axis=-1))

    return _make(np.concatenate([a.data[..., n:], -a.data[..., :n]], axis=-1), (a,), backward)


# -- activations ----------------------------------------------------------

def selu_value(x: np.ndarray) -> np.ndarray:
    return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def selu_slope(x: np.ndarray) -> np.ndarray:
    return SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def selu_curvature(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 0.0, SELU_SCALE * SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def selu(a: Tensor) -> Tensor:
    slope = selu_slope(a.data)

    def backward(g):
        a._accumulate(g * slope)

    return _make(selu_value(a.data), (a,), backward)


def selu_grad(a: Tensor) -> Tensor:
    """Elementwise derivative of SELU, itself differentiable (needed for tangents)."""

    def backward(g):
        a._accumulate(g * selu_curvature(a.data))

    return _make(selu_slope(a.data), (a,), backward)


# -- convolutions ---------------------------------------------------------

def conv_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def conv_transpose_output_length(length: int, kernel: int, stride: int, padding: int,
                                 output_padding: int) -> int:
    return (length - 1) * stride - 2 * padding + kernel + output_padding


def _conv1d_raw(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> tuple[np.ndarray, np.ndarray]:
    # x (B, Cin, L), w (Cout, Cin, k) -> (B, Cout, Lout); also returns the column view
    k = w.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    b, cin, lout, _ = cols.shape
    cols2 = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(b * lout, cin * k)
    out = cols2 @ w.reshape(w.shape[0], -1).T
    return out.reshape(b, lout, -1).transpose(0, 2, 1), cols2


def _conv1d_input_grad(g: np.ndarray, w: np.ndarray, length: int, stride: int,
                       padding: int) -> np.ndarray:
    b, cout, lout = g.shape
    _, cin, k = w.shape
    gcols = (g.transpose(0, 2, 1).reshape(b * lout, cout) @ w.reshape(cout, cin * k))
    gcols = gcols.reshape(b, lout, cin, k)
    gp = np.zeros((b, cin, length + 2 * padding))
    span = stride * (lout - 1) + 1
    for j in range(k):
        gp[:, :, j:j + span:stride] += gcols[:, :, :, j].transpose(0, 2, 1)
    return gp[:, :, padding:padding + length] if padding else gp


def conv1d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding; ``x`` is (B, Cin, L), ``w`` is (Cout, Cin, k)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape[1]}, kernel {w.shape[1]}")
    out, cols2 = _conv1d_raw(x.data, w.data, stride, padding)
    length = x.shape[2]

    def backward(g):
        if w.requires_grad:
            b, cout, lout = g.shape
            gw = g.transpose(1, 0, 2).reshape(cout, b * lout) @ cols2
            w._accumulate(gw.reshape(w.shape))
        if x.requires_grad:
            x._accumulate(_conv1d_input_grad(g, w.data, length, stride, padding))

    return _make(out, (x, w), backward)


def conv_transpose1d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0,
                     output_padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv1d`; ``x`` is (B, Cin, L), ``w`` is (Cin, Cout, k)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"channel mismatch: input {x.shape[1]}, kernel {w.shape[0]}")
    b, cin, length = x.shape
    _, cout, k = w.shape
    lout = conv_transpose_output_length(length, k, stride, padding, output_padding)
    full = (length - 1) * stride + k + output_padding
    span = stride * (length - 1) + 1
    # (B*L, Cin) @ (Cin, Cout*k)
    xrows = x.data.transpose(0, 2, 1).reshape(b * length, cin)
    contrib = (xrows @ w.data.reshape(cin, cout * k)).reshape(b, length, cout, k)
    buf = np.zeros((b, cout, full))
    for j in range(k):
        buf[:, :, j:j + span:stride] += contrib[:, :, :, j].transpose(0, 2, 1)
    out = buf[:, :, padding:padding + lout]

    def backward(g):
        gfull = np.zeros((b, cout, full))
        gfull[:, :, padding:padding + lout] = g
        # windows of gfull aligned with each input position: (B, Cout, L, k)
        win = np.stack([gfull[:, :, j:j + span:stride] for j in range(k)], axis=-1)
        wrows = win.transpose(0, 2, 1, 3).reshape(b * length, cout * k)
        if x.requires_grad:
            gx = wrows @ w.data.reshape(cin, cout * k).T
            x._accumulate(gx.reshape(b, length, cin).transpose(0, 2, 1))
        if w.requires_grad:
            gw = xrows.T @ wrows
            w._accumulate(gw.reshape(w.shape))

    return _make(np.ascontiguousarray(out), (x, w), backward)


def leaves(values: Iterable[np.ndarray]) -> list[Tensor]:
    return [Tensor(v, requires_grad=True) for v in values]
