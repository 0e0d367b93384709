"""Conditioning quality: how well generated objects land inside the requested boxes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..boxgeom import BBox, iou_array, rasterize_batch
from ..diffmath import Tensor, no_grad
from ..netzoo import Detector, Generator
from .requests import SceneSampler
from .training import detect_boxes, score_detections

Request = tuple[BBox, int]


@dataclass
class ConditioningRow:
    requested: BBox
    requested_class: int
    detected: BBox | None
    detected_class: int | None
    iou: float
    class_match: bool


@dataclass
class ConditioningReport:
    mean_iou: float
    class_accuracy: float
    rows: list[ConditioningRow] = field(repr=False)

    def to_dict(self) -> dict:
        return {"mean_iou": self.mean_iou, "class_accuracy": self.class_accuracy, "n": len(self.rows)}

    def table(self) -> str:
        lines = ["requested_class,rx1,ry1,rx2,ry2,detected_class,dx1,dy1,dx2,dy2,iou,class_match"]
        for r in self.rows:
            det = r.detected.as_tuple() if r.detected else ("", "", "", "")
            dcls = "" if r.detected_class is None else r.detected_class
            lines.append(",".join(str(v) for v in (r.requested_class, *r.requested.as_tuple(), dcls, *det,
                                                       f"{r.iou:.6f}", int(r.class_match))))
        return "\n".join(lines) + "\n"


def generate_for(generator: Generator, requests: Sequence[Request], rng: np.random.Generator,
                 batch: int = 32) -> np.ndarray:
    """Generate one image per requested box (N x 3 x H x W)."""
    spec = generator.spec
    out = []
    with no_grad():
        for i in range(0, len(requests), batch):
            chunk = requests[i:i + batch]
            masks = rasterize_batch([b for b, _ in chunk], spec.image_side)
            noise = rng.standard_normal((len(chunk), spec.noise_channels, spec.image_side, spec.image_side),
                                        dtype=np.float32)
            out.append(generator(Tensor(noise), masks).data)
    return np.concatenate(out) if out else np.zeros((0, 3, spec.image_side, spec.image_side), np.float32)


def evaluate_conditioning(generator: Generator | None, detector: Detector | None, n: int,
                          rng: np.random.Generator, sampler=None,
                          generate_fn: Callable | None = None, detect_fn: Callable | None = None) -> ConditioningReport:
    """Request n boxes, generate, detect, and compare detections with the requests.

    ``generate_fn(requests, rng)`` and ``detect_fn(images)`` replace the default
    network calls, which lets callers plug in ideal or baseline components.
    """
    if sampler is None:
        side = generator.spec.image_side if generator is not None else 64
        sampler = SceneSampler()
        if sampler.config.image_side != side:
            from ..scenes import SceneConfig
            sampler = SceneSampler(SceneConfig(image_side=side))
    requests = sampler.draw(n, rng)
    images = generate_fn(requests, rng) if generate_fn else generate_for(generator, requests, rng)
    detections = detect_fn(images) if detect_fn else detect_boxes(detector, images)
    boxes = [b for b, _ in requests]
    classes = [c for _, c in requests]
    ious, match = score_detections(detections, boxes, classes) if n else (np.zeros(0), np.zeros(0, bool))
    rows = [ConditioningRow(b, c, d.box if d else None, d.class_id if d else None, float(i), bool(m))
            for b, c, d, i, m in zip(boxes, classes, detections, ious, match)]
    mean_iou = float(ious.mean()) if n else 0.0
    acc = float(match.mean()) if n else 0.0
    return ConditioningReport(mean_iou, acc, rows)


def random_box_iou_baseline(sampler=None, n_pairs: int = 10 ** 6, seed: int = 0, pool_size: int = 200_000) -> float:
    """Monte-Carlo mean IoU between two boxes drawn independently from the request distribution.

    Boxes come from a pool of ``pool_size`` independent draws; pairs are two
    distinct pool entries chosen uniformly.
    """
    sampler = sampler if sampler is not None else SceneSampler()
    rng = np.random.default_rng([seed, 41])
    pool_size = min(pool_size, 2 * n_pairs)
    pool = np.array([sampler.sample(rng)[0].as_array() for _ in range(pool_size)])
    i = rng.integers(0, pool_size, n_pairs)
    j = (i + rng.integers(1, pool_size, n_pairs)) % pool_size
    return float(iou_array(pool[i], pool[j]).mean())
