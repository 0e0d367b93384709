"""Axis-aligned boxes in normalized coordinates: IoU, CIoU, and box<->mask rasterization.

Coordinates live in [0, 1] with x to the right and y downward.  The batched
``*_t`` functions take (N, 4) tensors in (x1, y1, x2, y2) order and are
differentiable; they skip validation so decoded predictions may stray
outside the image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffmath import Tensor, arctan, maximum, minimum, no_grad, square

FOUR_OVER_PI_SQ = 4.0 / math.pi ** 2


class InvalidBoxError(ValueError):
    pass


class DegenerateBoxError(ValueError):
    """No pixel center falls inside the box."""


class EmptyMaskError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBoxError(f"non-finite box {coords}")
        if not all(0.0 <= c <= 1.0 for c in coords):
            raise InvalidBoxError(f"box {coords} leaves the unit square")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidBoxError(f"box {coords} has non-positive area")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Mask:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {v.shape}")
        if not np.isin(v, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        v = v.astype(np.uint8)
        if v.any():
            rows = np.flatnonzero(v.any(axis=1))
            cols = np.flatnonzero(v.any(axis=0))
            block = v[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
            if not block.all():
                raise ValueError("mask nonzero region is not a filled rectangle")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, Mask) and np.array_equal(self.values, other.values)


# -- differentiable batch versions ---------------------------------------------

def _cols(boxes: Tensor):
    return boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]


def iou_t(pred: Tensor, gt: Tensor) -> Tensor:
    px1, py1, px2, py2 = _cols(pred)
    gx1, gy1, gx2, gy2 = _cols(gt)
    iw = maximum(minimum(px2, gx2) - maximum(px1, gx1), 0.0)
    ih = maximum(minimum(py2, gy2) - maximum(py1, gy1), 0.0)
    inter = iw * ih
    union = (px2 - px1) * (py2 - py1) + (gx2 - gx1) * (gy2 - gy1) - inter
    return inter / union


def aspect_consistency_t(pred: Tensor, gt: Tensor) -> Tensor:
    px1, py1, px2, py2 = _cols(pred)
    gx1, gy1, gx2, gy2 = _cols(gt)
    diff = arctan((gx2 - gx1) / (gy2 - gy1)) - arctan((px2 - px1) / (py2 - py1))
    return square(diff) * FOUR_OVER_PI_SQ


def ciou_terms_t(pred: Tensor, gt: Tensor) -> dict[str, Tensor]:
    """Per-box CIoU pieces: iou, center distance ratio rho^2/c^2, v, alpha, loss."""
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    gt = gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=pred.dtype))
    px1, py1, px2, py2 = _cols(pred)
    gx1, gy1, gx2, gy2 = _cols(gt)
    iou = iou_t(pred, gt)
    # grouped as differences so identical boxes give exactly zero
    rho2 = square(((px1 - gx1) + (px2 - gx2)) * 0.5) + square(((py1 - gy1) + (py2 - gy2)) * 0.5)
    c2 = square(maximum(px2, gx2) - minimum(px1, gx1)) + square(maximum(py2, gy2) - minimum(py1, gy1))
    v = aspect_consistency_t(pred, gt)
    denom = (1.0 - iou) + v
    # alpha is 0/0 only when the boxes coincide; v = 0 there, so any finite alpha works
    safe = denom + Tensor((denom.data == 0).astype(denom.dtype))
    alpha = v / safe
    distance = rho2 / c2
    loss = (1.0 - iou) + distance + alpha * v
    return {"iou": iou, "distance": distance, "v": v, "alpha": alpha, "loss": loss}


def ciou_loss_t(pred: Tensor, gt: Tensor) -> Tensor:
    return ciou_terms_t(pred, gt)["loss"]


# -- scalar API ---------------------------------------------------------------------

def _check(*boxes):
    for b in boxes:
        if not isinstance(b, BBox):
            raise InvalidBoxError(f"expected BBox, got {type(b).__name__}")


def _pair_tensors(a: BBox, b: BBox) -> tuple[Tensor, Tensor]:
    return Tensor(a.as_array()[None]), Tensor(b.as_array()[None])


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two valid boxes."""
    _check(a, b)
    with no_grad():
        return float(iou_t(*_pair_tensors(a, b)).data[0])


def aspect_consistency(pred: BBox, gt: BBox) -> float:
    """(4/pi^2) * (atan(w_gt/h_gt) - atan(w/h))^2, in [0, 1]."""
    _check(pred, gt)
    with no_grad():
        return float(aspect_consistency_t(*_pair_tensors(pred, gt)).data[0])


def ciou_loss(pred: BBox, gt: BBox) -> float:
    """1 - IoU + rho^2/c^2 + alpha*v with alpha = v / ((1 - IoU) + v)."""
    _check(pred, gt)
    with no_grad():
        return float(ciou_loss_t(*_pair_tensors(pred, gt)).data[0])


def iou_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized IoU over (N, 4) arrays, no validation."""
    iw = np.clip(np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0, None)
    inter = iw * ih
    union = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1]) + (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1]) - inter
    return inter / union


# -- rasterization --------------------------------------------------------------

def rasterize_mask(box: BBox, width: int, height: int) -> Mask:
    """Pixel (r, c) is set iff its center ((c+.5)/width, (r+.5)/height) lies in [x1,x2) x [y1,y2)."""
    _check(box)
    if width < 1 or height < 1:
        raise ValueError(f"mask size must be positive, got {width}x{height}")
    cx = np.arange(width) + 0.5
    cy = np.arange(height) + 0.5
    in_x = (cx >= box.x1 * width) & (cx < box.x2 * width)
    in_y = (cy >= box.y1 * height) & (cy < box.y2 * height)
    if not in_x.any() or not in_y.any():
        raise DegenerateBoxError(f"no pixel center of a {width}x{height} grid falls inside {box.as_tuple()}")
    return Mask(np.outer(in_y, in_x).astype(np.uint8))


def mask_to_box(mask: Mask) -> BBox:
    v = mask.values
    rows = np.flatnonzero(v.any(axis=1))
    cols = np.flatnonzero(v.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskError("mask has no nonzero pixels")
    return BBox(cols[0] / mask.width, rows[0] / mask.height,
                (cols[-1] + 1) / mask.width, (rows[-1] + 1) / mask.height)


def rasterize_batch(boxes, side: int, dtype=np.float32) -> np.ndarray:
    """Stack rasterized masks into an (N, 1, side, side) array."""
    out = np.zeros((len(boxes), 1, side, side), dtype=dtype)
    for i, box in enumerate(boxes):
        out[i, 0] = rasterize_mask(box, side, side).values
    return out
