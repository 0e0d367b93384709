"""Adam optimizer over numpy parameter buffers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NonFiniteError(FloatingPointError):
    """A gradient contained NaN or infinity."""


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(0, [np.zeros_like(_arr(p)) for p in params], [np.zeros_like(_arr(p)) for p in params])


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, applied in place to ``params``.

    ``params`` may be Tensors or arrays; ``grads`` arrays or Tensors of the
    same shapes.  Returns ``(params, state)``.
    """
    params = list(params)
    grads = [_arr(g) for g in grads]
    if not state.m:
        state.m = [np.zeros_like(_arr(p)) for p in params]
        state.v = [np.zeros_like(_arr(p)) for p in params]
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("adam_step: params, grads and state have different lengths")
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if _arr(p).shape != g.shape or m.shape != g.shape or v.shape != g.shape:
            raise ValueError(f"adam_step: shape mismatch {_arr(p).shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("adam_step: non-finite gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        arr = _arr(p)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        arr -= update.astype(arr.dtype, copy=False)
    return params, state


class Adam:
    """Stateful wrapper binding a parameter list to an AdamState."""

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.5, beta2: float = 0.9, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState.zeros_like(self.params)

    def step(self, grads) -> None:
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
