"""Differentiable primitives.

Backward closures only capture input tensors and numpy constants (masks,
shapes), never the output tensor, so graphs carry no reference cycles.
"""
from __future__ import annotations

import builtins

import numpy as np

from .tensor import Tensor, as_tensor, make_result


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def const(array, like: Tensor) -> Tensor:
    return Tensor(np.asarray(array, dtype=like.dtype))


# -- broadcasting helpers ----------------------------------------------------

def _sum_to_array(x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    if lead:
        x = x.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and x.shape[i] != 1)
    if axes:
        x = x.sum(axis=axes, keepdims=True)
    return x.reshape(shape)


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast result back to ``shape`` (adjoint of broadcast_to)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape

    def bw(g, needs):
        return (broadcast_to(g, src),)

    return make_result(_sum_to_array(x.data, shape), (x,), bw, "sum_to")


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape

    def bw(g, needs):
        return (sum_to(g, src),)

    return make_result(np.broadcast_to(x.data, shape), (x,), bw, "broadcast_to")


# -- elementwise arithmetic -----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                sum_to(g, b.shape) if needs[1] else None)

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                sum_to(neg(g), b.shape) if needs[1] else None)

    return make_result(a.data - b.data, (a, b), bw, "sub")


def neg(a: Tensor) -> Tensor:
    def bw(g, needs):
        return (neg(g),)

    return make_result(-a.data, (a,), bw, "neg")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g, needs):
        return (sum_to(mul(g, b), a.shape) if needs[0] else None,
                sum_to(mul(g, a), b.shape) if needs[1] else None)

    return make_result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g, needs):
        ga = sum_to(div(g, b), a.shape) if needs[0] else None
        gb = sum_to(neg(div(mul(g, a), square(b))), b.shape) if needs[1] else None
        return ga, gb

    return make_result(a.data / b.data, (a, b), bw, "div")


def square(a: Tensor) -> Tensor:
    def bw(g, needs):
        return (mul(g, mul(a, 2.0)),)

    return make_result(a.data * a.data, (a,), bw, "square")


def sqrt(a: Tensor) -> Tensor:
    def bw(g, needs):
        return (div(g, mul(sqrt(a), 2.0)),)

    return make_result(np.sqrt(a.data), (a,), bw, "sqrt")


def exp(a: Tensor) -> Tensor:
    def bw(g, needs):
        return (mul(g, exp(a)),)

    return make_result(np.exp(a.data), (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    def bw(g, needs):
        return (div(g, a),)

    return make_result(np.log(a.data), (a,), bw, "log")


def arctan(a: Tensor) -> Tensor:
    def bw(g, needs):
        return (div(g, add(square(a), 1.0)),)

    return make_result(np.arctan(a.data), (a,), bw, "arctan")


def sigmoid(a: Tensor) -> Tensor:
    def bw(g, needs):
        s = sigmoid(a)
        return (mul(g, mul(s, sub(1.0, s))),)

    return make_result(_sigmoid(a.data), (a,), bw, "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bw(g, needs):
        return (Tensor(g.data * (1.0 - y * y)),)

    return make_result(y, (a,), bw, "tanh", higher=False)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g, needs):
        gd = g.data
        return (Tensor(y * (gd - (gd * y).sum(axis=axis, keepdims=True))),)

    return make_result(y, (a,), bw, "softmax", higher=False)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    # derivative at exactly 0 takes the negative-side slope
    def bw(g, needs):
        factor = np.where(a.data > 0, a.dtype.type(1.0), a.dtype.type(slope))
        return (mul(g, Tensor(factor)),)

    x = a.data
    out = np.maximum(x, x * slope) if 0.0 <= slope <= 1.0 else np.where(x > 0, x, x * slope)
    return make_result(out, (a,), bw, "leaky_relu")


def relu(a: Tensor) -> Tensor:
    return leaky_relu(a, 0.0)


def _select(a: Tensor, b: Tensor, take_a: np.ndarray, op: str) -> Tensor:
    shape = np.broadcast_shapes(a.shape, b.shape)
    ma = take_a.astype(a.dtype)
    mb = (1.0 - ma).astype(b.dtype)

    def bw(g, needs):
        return (sum_to(mul(g, Tensor(ma)), a.shape) if needs[0] else None,
                sum_to(mul(g, Tensor(mb)), b.shape) if needs[1] else None)

    out = np.where(take_a, a.data, b.data)
    return make_result(np.broadcast_to(out, shape).copy(), (a, b), bw, op)


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to ``a``."""
    a, b = _pair(a, b)
    return _select(a, b, a.data <= b.data, "minimum")


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to ``a``."""
    a, b = _pair(a, b)
    return _select(a, b, a.data >= b.data, "maximum")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    return minimum(maximum(a, lo), hi)


# -- reductions and shape ops ------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))
    src = a.shape

    def bw(g, needs):
        return (broadcast_to(reshape(g, kept), src),)

    return make_result(np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return mul(sum(a, axes, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape

    def bw(g, needs):
        return (reshape(g, src),)

    return make_result(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def bw(g, needs):
        return (transpose(g, inverse),)

    return make_result(a.data.transpose(axes), (a,), bw, "transpose")


def getitem(a: Tensor, index) -> Tensor:
    src = a.shape

    def bw(g, needs):
        return (_scatter(g, src, index),)

    return make_result(a.data[index], (a,), bw, "getitem")


def _scatter(g: Tensor, shape, index) -> Tensor:
    """Place ``g`` at ``index`` inside zeros of ``shape`` (adjoint of getitem)."""
    out = np.zeros(shape, dtype=g.dtype)
    if _needs_add_at(index):
        np.add.at(out, index, g.data)
    else:
        out[index] = g.data

    def bw(gg, needs):
        return (getitem(gg, index),)

    return make_result(out, (g,), bw, "scatter")


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return builtins.any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g, needs):
        out = []
        for k, need in enumerate(needs):
            if not need:
                out.append(None)
                continue
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(bounds[k]), int(bounds[k + 1]))
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return make_result(data, tuple(tensors), bw, "concat")


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")

    def bw(g, needs):
        return (matmul(g, transpose(b)) if needs[0] else None,
                matmul(transpose(a), g) if needs[1] else None)

    return make_result(a.data @ b.data, (a, b), bw, "matmul")


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Fully connected layer: ``x @ weight.T + bias`` for x of shape (N, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"affine: input width {x.shape[-1]} != weight width {weight.shape[1]}")
    out = matmul(x, transpose(weight))
    return out if bias is None else add(out, bias)


def upsample2x(a: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsample of an NCHW tensor."""
    def bw(g, needs):
        return (_sumpool2(g),)

    return make_result(a.data.repeat(2, axis=2).repeat(2, axis=3), (a,), bw, "upsample2x")


def _sumpool2(a: Tensor) -> Tensor:
    n, c, h, w = a.shape

    def bw(g, needs):
        return (upsample2x(g),)

    data = a.data.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
    return make_result(data, (a,), bw, "sumpool2")
