"""Box-request samplers for conditional generation.

Requested boxes are snapped to the pixel grid, so they rasterize exactly
and survive the 6-decimal label format bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..boxgeom import BBox
from ..scenes import SceneConfig, sample_label


class SceneSampler:
    """Draws (box, class) pairs from the synthetic scene distribution."""

    def __init__(self, config: SceneConfig = SceneConfig()):
        self.config = config

    def sample(self, rng: np.random.Generator) -> tuple[BBox, int]:
        return sample_label(self.config, rng)

    def draw(self, n: int, rng: np.random.Generator) -> list[tuple[BBox, int]]:
        return [self.sample(rng) for _ in range(n)]


@dataclass(frozen=True)
class BoxSampler:
    """Uniform box sizes within [min_size, max_size] (fractions of the side).

    With ``corner_margin`` set, each box lies inside a square corner region of
    that size, chosen uniformly among the four corners.
    """

    min_size: float = 0.2
    max_size: float = 0.6
    corner_margin: float | None = None
    side: int = 64
    n_classes: int = 3

    def __post_init__(self):
        if not 0 < self.min_size <= self.max_size <= 1:
            raise ValueError(f"invalid size bounds [{self.min_size}, {self.max_size}]")
        if self.corner_margin is not None and not self.max_size <= self.corner_margin <= 1:
            raise ValueError("corner_margin must be at least max_size")
        lo, hi = self._pixel_bounds()
        if lo > hi:
            raise ValueError(f"no whole-pixel box size within [{self.min_size}, {self.max_size}] at side {self.side}")

    def _pixel_bounds(self) -> tuple[int, int]:
        return max(1, math.ceil(self.min_size * self.side - 1e-9)), math.floor(self.max_size * self.side + 1e-9)

    def sample(self, rng: np.random.Generator) -> tuple[BBox, int]:
        lo, hi = self._pixel_bounds()
        w, h = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        cls = int(rng.integers(self.n_classes))
        if self.corner_margin is None:
            x0 = int(rng.integers(0, self.side - w + 1))
            y0 = int(rng.integers(0, self.side - h + 1))
        else:
            region = math.floor(self.corner_margin * self.side + 1e-9)
            x0 = int(rng.integers(0, region - w + 1))
            y0 = int(rng.integers(0, region - h + 1))
            corner = int(rng.integers(4))
            if corner & 1:
                x0 = self.side - w - x0
            if corner & 2:
                y0 = self.side - h - y0
        s = self.side
        return BBox(x0 / s, y0 / s, (x0 + w) / s, (y0 + h) / s), cls

    def draw(self, n: int, rng: np.random.Generator) -> list[tuple[BBox, int]]:
        return [self.sample(rng) for _ in range(n)]

    def contains(self, box: BBox) -> bool:
        """True when ``box`` satisfies this sampler's size and position bounds."""
        tol = 1e-9
        ok = self.min_size - tol <= box.width <= self.max_size + tol and \
            self.min_size - tol <= box.height <= self.max_size + tol
        if self.corner_margin is not None:
            m = self.corner_margin + tol
            near_x = box.x2 <= m or box.x1 >= 1 - m
            near_y = box.y2 <= m or box.y1 >= 1 - m
            ok = ok and near_x and near_y
        return ok


PRESETS = {
    "default": BoxSampler(0.2, 0.6),
    # small objects tucked into a corner
    "hard": BoxSampler(0.1, 0.25, corner_margin=0.35),
}


def make_sampler(preset: str, side: int = 64, n_classes: int = 3):
    if preset == "scene":
        return SceneSampler(SceneConfig(image_side=side, n_classes=n_classes))
    if preset not in PRESETS:
        raise ValueError(f"unknown sampler preset {preset!r}; choose from scene, {', '.join(PRESETS)}")
    base = PRESETS[preset]
    return BoxSampler(base.min_size, base.max_size, base.corner_margin, side, n_classes)
