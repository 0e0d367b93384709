"""Wasserstein critic/generator losses and the interpolate gradient penalty.

Convention: the critic minimizes mean(fake) - mean(real); the logged
Wasserstein estimate is the negation, mean(real) - mean(fake).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffmath import Tensor, grad, mean, sqrt, square, sum


class EmptyBatchError(ValueError):
    pass


def _scores(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.size == 0:
        raise EmptyBatchError("score batch is empty")
    return t


@dataclass
class GanBatchScores:
    real: Tensor | np.ndarray
    fake: Tensor | np.ndarray

    def __post_init__(self):
        self.real = _scores(self.real)
        self.fake = _scores(self.fake)
        if not (np.isfinite(self.real.data).all() and np.isfinite(self.fake.data).all()):
            raise FloatingPointError("critic scores must be finite")


def critic_loss(scores: GanBatchScores) -> Tensor:
    return mean(scores.fake) - mean(scores.real)


def generator_loss(fake) -> Tensor:
    return -mean(_scores(fake))


def wasserstein_estimate(scores: GanBatchScores) -> Tensor:
    return mean(scores.real) - mean(scores.fake)


def interpolate(real: np.ndarray, fake: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Per-sample mix eps * real + (1 - eps) * fake, eps shaped (N,)."""
    e = np.asarray(eps, dtype=real.dtype).reshape((-1,) + (1,) * (real.ndim - 1))
    return e * real + (1 - e) * fake


def gradient_penalty(critic: Callable[[Tensor], Tensor], real, fake, lambda_gp: float = 10.0,
                     rng: np.random.Generator | None = None, eps: np.ndarray | None = None) -> Tensor:
    """lambda_gp * mean((||grad_x critic(x_hat)|| - 1)^2) over per-sample interpolates.

    The result stays differentiable with respect to the critic's weights.
    ``critic`` maps an (N, ...) batch to N scores.
    """
    real = real.data if isinstance(real, Tensor) else np.asarray(real)
    fake = fake.data if isinstance(fake, Tensor) else np.asarray(fake)
    if real.shape != fake.shape:
        raise ValueError(f"real {real.shape} and fake {fake.shape} batches differ")
    if real.shape[0] == 0:
        raise EmptyBatchError("gradient penalty needs a nonempty batch")
    if eps is None:
        rng = rng if rng is not None else np.random.default_rng()
        eps = rng.uniform(0.0, 1.0, size=real.shape[0])
    x_hat = Tensor(interpolate(real, fake, eps), requires_grad=True)
    (g,) = grad(sum(critic(x_hat)), [x_hat], create_graph=True)
    axes = tuple(range(1, g.ndim))
    norms = sqrt(sum(square(g), axis=axes) + 1e-12)
    return mean(square(norms - 1.0)) * lambda_gp


def clip_weights(params, clip_value: float) -> None:
    """Fallback Lipschitz constraint: clamp every critic weight to [-c, c] in place."""
    for p in params:
        np.clip(p.data, -clip_value, clip_value, out=p.data)
