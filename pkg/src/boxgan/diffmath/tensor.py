"""Dense tensors with define-by-run reverse-mode differentiation.

Every op records its parents and a vector-Jacobian closure.  The closures are
written with Tensor ops themselves, so running the backward pass with graph
recording switched on (``create_graph=True``) yields a differentiable gradient.
Ops whose closure is plain numpy are flagged first-order only.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_FLOAT_TYPES = (np.float32, np.float64)
_mode = threading.local()


class SecondOrderError(RuntimeError):
    """A first-order-only op was hit while recording a backward pass."""


def is_grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


@contextmanager
def set_grad_enabled(flag: bool):
    prev = is_grad_enabled()
    _mode.enabled = flag
    try:
        yield
    finally:
        _mode.enabled = prev


def no_grad():
    return set_grad_enabled(False)


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.type not in _FLOAT_TYPES:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op", "_higher")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"
        self._higher = True

    # -- basic properties -------------------------------------------------
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

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op}{flag})"

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return ops.add(self, other)

    def __radd__(self, other):
        return ops.add(other, self)

    def __sub__(self, other):
        return ops.sub(self, other)

    def __rsub__(self, other):
        return ops.sub(other, self)

    def __mul__(self, other):
        return ops.mul(self, other)

    def __rmul__(self, other):
        return ops.mul(other, self)

    def __truediv__(self, other):
        return ops.div(self, other)

    def __rtruediv__(self, other):
        return ops.div(other, self)

    def __neg__(self):
        return ops.neg(self)

    def __matmul__(self, other):
        return ops.matmul(self, other)

    def __getitem__(self, index):
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return ops.mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str,
                higher: bool = True) -> Tensor:
    """Wrap an op's forward value, linking it into the graph when needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    out._higher = higher
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# -- engine -------------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(root: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of scalar ``root`` with respect to each tensor in ``wrt``.

    Tensors off the path from ``root`` get zeros.  With ``create_graph`` the
    backward pass is itself recorded so the results can be differentiated again.
    """
    if root.size != 1:
        raise ValueError(f"backward root must be a scalar, got shape {root.shape}")
    wrt = list(wrt)
    wrt_ids = {id(t) for t in wrt}
    results: dict[int, Tensor] = {}
    if root.requires_grad:
        order = _toposort(root)
        relevant: set[int] = set()
        for node in order:
            if id(node) in wrt_ids or any(id(p) in relevant for p in node._parents):
                relevant.add(id(node))
        pending: dict[int, Tensor] = {id(root): Tensor(np.ones_like(root.data))}
        with set_grad_enabled(create_graph):
            for node in reversed(order):
                g = pending.pop(id(node), None)
                if g is None or id(node) not in relevant:
                    continue
                if id(node) in wrt_ids:
                    results[id(node)] = g
                if not node._parents:
                    continue
                needs = tuple(p.requires_grad and id(p) in relevant for p in node._parents)
                if not any(needs):
                    continue
                if create_graph and not node._higher:
                    raise SecondOrderError(f"op '{node._op}' has no differentiable backward")
                parent_grads = node._backward(g, needs)
                for p, pg, need in zip(node._parents, parent_grads, needs):
                    if not need or pg is None:
                        continue
                    prev = pending.get(id(p))
                    pending[id(p)] = pg if prev is None else prev + pg
    out = []
    for t in wrt:
        g = results.get(id(t))
        out.append(g if g is not None else Tensor(np.zeros_like(t.data)))
    return out


def backward(root: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if params is None:
        params = [t for t in _toposort(root) if t.is_leaf] if root.requires_grad else []
    params = [p for p in params if p.requires_grad]
    for p, g in zip(params, grad(root, params)):
        p.grad = g.data.copy() if p.grad is None else p.grad + g.data


def grad_of_grad(inner_root: Tensor, inner_wrt: Sequence[Tensor],
                 outer_fn: Callable[[list[Tensor]], Tensor],
                 outer_wrt: Sequence[Tensor]) -> list[Tensor]:
    """Differentiate ``outer_fn(d inner_root / d inner_wrt)`` with respect to ``outer_wrt``."""
    inner = grad(inner_root, inner_wrt, create_graph=True)
    return grad(outer_fn(inner), outer_wrt)


from . import ops  # noqa: E402  (operators above dispatch into ops)
