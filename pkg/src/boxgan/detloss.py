"""Grid targets and the YOLO-style detection losses.

Grid layout per cell: for each of B slots ``(tx, ty, tw, th, conf)``, then C
class scores.  ``(tx, ty)`` are offsets inside the cell, ``(tw, th)`` are
image-relative sizes.  Losses accept one grid (S, S, D) or a batch
(N, S, S, D) and return a scalar or a per-sample vector accordingly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .boxgeom import BBox, InvalidBoxError, ciou_loss_t
from .diffmath import Tensor, concat, mul, reshape, square, sum


class GridError(ValueError):
    pass


class NoObjectError(GridError):
    """The target grid has no responsible cell, so the box term is undefined."""


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # box (CIoU) term
    beta: float = 1.0  # confidence term
    theta: float = 1.0  # classification term
    lambda_noobj: float = 0.5

    def __post_init__(self):
        if min(self.alpha, self.beta, self.theta, self.lambda_noobj) < 0:
            raise ValueError(f"loss weights must be nonnegative: {self}")


@dataclass
class DetectionGrid:
    values: np.ndarray | Tensor
    B: int = 1

    def __post_init__(self):
        shape = self.values.shape
        if len(shape) not in (3, 4) or shape[-2] != shape[-3]:
            raise GridError(f"grid must be S x S x D or N x S x S x D, got {shape}")
        if shape[-1] < 5 * self.B + 1:
            raise GridError(f"grid depth {shape[-1]} too small for B={self.B}")

    @property
    def S(self) -> int:
        return self.values.shape[-2]

    @property
    def C(self) -> int:
        return self.values.shape[-1] - 5 * self.B

    @property
    def batched(self) -> bool:
        return len(self.values.shape) == 4

    def tensor(self) -> Tensor:
        v = self.values
        t = v if isinstance(v, Tensor) else Tensor(v)
        return t if self.batched else reshape(t, (1,) + t.shape)


class DetectionLoss(NamedTuple):
    total: Tensor
    ciou: Tensor
    conf: Tensor
    clf: Tensor


class Detection(NamedTuple):
    box: BBox
    class_id: int
    confidence: float


def responsible_cell(center: float, S: int) -> int:
    return min(int(math.floor(center * S)), S - 1)


def encode_target(labels: Sequence[tuple[BBox, int]], S: int, B: int = 1, C: int = 3) -> DetectionGrid:
    """Write each label into slot 0 of the cell holding its center."""
    grid = np.zeros((S, S, 5 * B + C), dtype=np.float64)
    taken = set()
    for box, cls in labels:
        if not 0 <= int(cls) < C:
            raise GridError(f"class id {cls} outside [0, {C})")
        cx, cy = box.center
        col, row = responsible_cell(cx, S), responsible_cell(cy, S)
        if (row, col) in taken:
            raise GridError(f"two labels map to cell ({row}, {col})")
        taken.add((row, col))
        grid[row, col, 0:5] = (cx * S - col, cy * S - row, box.width, box.height, 1.0)
        grid[row, col, 5 * B + int(cls)] = 1.0
    return DetectionGrid(grid, B)


def encode_batch(labels: Sequence[tuple[BBox, int]], S: int, B: int = 1, C: int = 3) -> np.ndarray:
    """One label per image -> (N, S, S, 5B + C) target array."""
    return np.stack([encode_target([lab], S, B, C).values for lab in labels])


def _check_pair(pred: DetectionGrid, target: DetectionGrid):
    if pred.values.shape != target.values.shape or pred.B != target.B:
        raise GridError(f"pred {pred.values.shape} and target {target.values.shape} are not compatible")


def _finish(per_sample: Tensor, pred: DetectionGrid) -> Tensor:
    return per_sample if pred.batched else reshape(per_sample, ())


def _conf_split(pred: DetectionGrid, target: DetectionGrid):
    p, t = pred.tensor(), target.tensor()
    b = pred.B
    conf_idx = [5 * j + 4 for j in range(b)]
    tconf = t.data[..., conf_idx]
    pconf = concat([p[..., k:k + 1] for k in conf_idx], axis=-1)
    return pconf, tconf


def confidence_loss(pred: DetectionGrid, target: DetectionGrid, lambda_noobj: float = 0.5) -> Tensor:
    """Squared confidence error on object slots plus lambda_noobj times the rest."""
    _check_pair(pred, target)
    pconf, tconf = _conf_split(pred, target)
    obj = (tconf > 0.5).astype(pconf.dtype)
    weight = obj + lambda_noobj * (1.0 - obj)
    err = square(pconf - Tensor(tconf.astype(pconf.dtype)))
    return _finish(sum(mul(err, Tensor(weight)), axis=(1, 2, 3)), pred)


def _object_cells(target: DetectionGrid) -> np.ndarray:
    t = target.tensor().data
    conf = t[..., [5 * j + 4 for j in range(target.B)]]
    return (conf > 0.5).any(axis=-1)


def classification_loss(pred: DetectionGrid, target: DetectionGrid) -> Tensor:
    """Squared class-probability error summed over object cells."""
    _check_pair(pred, target)
    p, t = pred.tensor(), target.tensor()
    nb = 5 * pred.B
    cells = _object_cells(target).astype(p.dtype)[..., None]
    err = square(p[..., nb:] - Tensor(t.data[..., nb:].astype(p.dtype)))
    return _finish(sum(mul(err, Tensor(cells)), axis=(1, 2, 3)), pred)


def decode_boxes(slots: Tensor, rows: np.ndarray, cols: np.ndarray, S: int) -> Tensor:
    """(N, 4) raw (tx, ty, tw, th) at the given cells -> (N, 4) corner boxes."""
    cx = (slots[:, 0] + Tensor(cols.astype(slots.dtype))) * (1.0 / S)
    cy = (slots[:, 1] + Tensor(rows.astype(slots.dtype))) * (1.0 / S)
    hw, hh = slots[:, 2] * 0.5, slots[:, 3] * 0.5
    parts = [cx - hw, cy - hh, cx + hw, cy + hh]
    return concat([reshape(q, (-1, 1)) for q in parts], axis=1)


def box_loss(pred: DetectionGrid, target: DetectionGrid) -> Tensor:
    """CIoU between the responsible slot's decoded box and the target box."""
    _check_pair(pred, target)
    p, t = pred.tensor(), target.tensor()
    tconf = t.data[..., [5 * j + 4 for j in range(pred.B)]]
    n = p.shape[0]
    flat = tconf.reshape(n, -1)
    counts = (flat > 0.5).sum(axis=1)
    if (counts != 1).any():
        bad = int(np.flatnonzero(counts != 1)[0])
        if counts[bad] == 0:
            raise NoObjectError(f"sample {bad} has no object cell")
        raise GridError(f"sample {bad} has {counts[bad]} object slots; one expected")
    pos = flat.argmax(axis=1)
    S, B = pred.S, pred.B
    rows, rem = np.divmod(pos, S * B)
    cols, slot = np.divmod(rem, B)
    samples = np.arange(n)
    idx = (samples, rows, cols)
    p_slots = concat([reshape(p[idx + (5 * slot + k,)], (-1, 1)) for k in range(4)], axis=1)
    t_slots = np.stack([t.data[samples, rows, cols, 5 * slot + k] for k in range(4)], axis=1)
    pred_boxes = decode_boxes(p_slots, rows, cols, S)
    gt_boxes = decode_boxes(Tensor(t_slots.astype(p.dtype)), rows, cols, S)
    return _finish(ciou_loss_t(pred_boxes, gt_boxes), pred)


def total_detection_loss(pred: DetectionGrid, target: DetectionGrid,
                         weights: LossWeights = LossWeights()) -> DetectionLoss:
    """alpha * CIoU + beta * confidence + theta * classification, with the parts."""
    l_box = box_loss(pred, target)
    l_conf = confidence_loss(pred, target, weights.lambda_noobj)
    l_clf = classification_loss(pred, target)
    total = l_box * weights.alpha + l_conf * weights.beta + l_clf * weights.theta
    return DetectionLoss(total, l_box, l_conf, l_clf)


def decode_single(grid: DetectionGrid, conf_threshold: float = 0.0) -> Detection | None:
    """Box, class and confidence of the most confident slot, or None below threshold."""
    v = grid.values.data if isinstance(grid.values, Tensor) else np.asarray(grid.values)
    if v.ndim != 3:
        raise GridError(f"decode_single expects one S x S x D grid, got {v.shape}")
    S, B = grid.S, grid.B
    conf = v[..., [5 * j + 4 for j in range(B)]]
    row, col, slot = np.unravel_index(int(np.argmax(conf)), conf.shape)
    best = float(conf[row, col, slot])
    if best < conf_threshold:
        return None
    tx, ty, tw, th = (float(x) for x in v[row, col, 5 * slot:5 * slot + 4])
    cx, cy = (col + tx) / S, (row + ty) / S
    coords = [min(max(c, 0.0), 1.0) for c in (cx - tw / 2, cy - th / 2, cx + tw / 2, cy + th / 2)]
    try:
        box = BBox(*coords)
    except InvalidBoxError:
        return None
    cls = int(np.argmax(v[row, col, 5 * B:]))
    return Detection(box, cls, best)


def decode_batch(grids: np.ndarray, B: int = 1, conf_threshold: float = 0.0) -> list[Detection | None]:
    return [decode_single(DetectionGrid(g, B), conf_threshold) for g in np.asarray(grids)]
