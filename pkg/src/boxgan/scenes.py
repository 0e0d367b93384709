"""Synthetic one-shape scenes, the on-disk dataset format, and external image ingestion.

Dataset layout::

    <dir>/images/000000.png   8-bit RGB
    <dir>/labels/000000.txt   one line per object: "class_id x1 y1 x2 y2" (6 decimals)

Pixels are held in memory as 3 x H x W float32 in [-1, 1].
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .boxgeom import BBox, InvalidBoxError

CLASS_NAMES = ("circle", "square", "triangle")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp")


class DatasetError(ValueError):
    pass


class PlacementError(ValueError):
    """The configured size range admits no shape that fits the image."""


@dataclass(frozen=True)
class SceneConfig:
    image_side: int = 64
    size_range: tuple[float, float] = (0.2, 0.6)
    min_contrast: float = 0.5  # Euclidean RGB distance in [-1, 1] units
    noise_amplitude: float = 0.03
    complexity: float = 0.0  # amplitude of extra background texture, 0 = plain gradient
    n_classes: int = 3

    def __post_init__(self):
        object.__setattr__(self, "size_range", tuple(float(s) for s in self.size_range))
        lo, hi = self.size_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"size range {self.size_range} must satisfy 0 < lo <= hi <= 1")
        if self.image_side < 4:
            raise ValueError("image side must be at least 4")
        if self.min_contrast < 0 or self.noise_amplitude < 0 or self.complexity < 0:
            raise ValueError("contrast, noise and complexity must be nonnegative")
        if not 1 <= self.n_classes <= len(CLASS_NAMES):
            raise ValueError(f"n_classes must be in [1, {len(CLASS_NAMES)}]")

    def pixel_sizes(self) -> tuple[int, int]:
        lo = math.ceil(self.size_range[0] * self.image_side)
        hi = math.floor(self.size_range[1] * self.image_side)
        lo = max(lo, 3)
        if lo > hi:
            raise PlacementError(f"size range {self.size_range} on a {self.image_side}px image leaves no "
                                 "shape size of at least 3 pixels")
        return lo, hi


@dataclass
class LabeledImage:
    pixels: np.ndarray  # 3 x H x W in [-1, 1]
    labels: list[tuple[BBox, int]]
    shape_mask: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def box(self) -> BBox:
        return self.labels[0][0]

    @property
    def class_id(self) -> int:
        return self.labels[0][1]


# -- generation -----------------------------------------------------------------

def _shape_mask(cls: int, side: int, x0: float, y0: float, s: float, origin=(0, 0), extent=None) -> np.ndarray:
    """Pixel-center coverage of the shape over a window of the image grid (the whole grid by default)."""
    r0, c0 = origin
    h, w = extent if extent is not None else (side, side)
    yy, xx = np.mgrid[r0:r0 + h, c0:c0 + w] + 0.5
    if cls == 0:
        r = s / 2
        return (xx - (x0 + r)) ** 2 + (yy - (y0 + r)) ** 2 <= r * r
    if cls == 1:
        return (xx >= x0) & (xx < x0 + s) & (yy >= y0) & (yy < y0 + s)
    # upward triangle with apex at top-center, base along the bottom edge
    t = (yy - y0) / s
    half = 0.5 * s * t
    cx = x0 + s / 2
    return (t >= 0) & (t < 1) & (xx >= cx - half) & (xx < cx + half)


def _background(config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    side = config.image_side
    c0, c1 = rng.uniform(-1, 1, size=(2, 3))
    angle = rng.uniform(0, 2 * math.pi)
    yy, xx = (np.mgrid[0:side, 0:side] + 0.5) / side
    proj = (xx - 0.5) * math.cos(angle) + (yy - 0.5) * math.sin(angle)
    t = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-12)
    bg = c0[:, None, None] + (c1 - c0)[:, None, None] * t[None]
    if config.complexity > 0:
        for _ in range(3):
            f = rng.uniform(1, 4, size=2)
            phase = rng.uniform(0, 2 * math.pi)
            tint = rng.uniform(-1, 1, size=3)
            wave = np.sin(2 * math.pi * (f[0] * xx + f[1] * yy) + phase)
            bg = bg + config.complexity * tint[:, None, None] * wave[None]
    bg = bg + config.noise_amplitude * rng.standard_normal(bg.shape)
    return np.clip(bg, -1.0, 1.0)


def _fill_color(region: np.ndarray, min_contrast: float, rng: np.random.Generator) -> np.ndarray:
    """A color at Euclidean distance >= min_contrast from every background pixel in ``region`` (3 x K)."""
    def worst(c):
        return float(np.sqrt(((region - c[:, None]) ** 2).sum(axis=0)).min())

    for _ in range(64):
        c = rng.uniform(-1, 1, size=3)
        if worst(c) >= min_contrast:
            return c
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    best = max(corners, key=worst)
    if worst(best) < min_contrast:
        raise PlacementError(f"no fill color reaches contrast {min_contrast} against this background")
    return best


def _place(config: SceneConfig, rng: np.random.Generator, full_mask: bool = True):
    side = config.image_side
    lo, hi = config.pixel_sizes()
    cls = int(rng.integers(config.n_classes))
    s = float(rng.integers(lo, hi + 1))
    x0 = float(rng.uniform(0, side - s))
    y0 = float(rng.uniform(0, side - s))
    # the shape covers only pixel centers inside [x0, x0+s] x [y0, y0+s]
    r0, c0 = int(math.floor(y0)), int(math.floor(x0))
    h, w = min(side, int(math.ceil(y0 + s)) + 1) - r0, min(side, int(math.ceil(x0 + s)) + 1) - c0
    local = _shape_mask(cls, side, x0, y0, s, (r0, c0), (h, w))
    rows = np.flatnonzero(local.any(axis=1)) + r0
    cols = np.flatnonzero(local.any(axis=0)) + c0
    box = BBox(cols[0] / side, rows[0] / side, (cols[-1] + 1) / side, (rows[-1] + 1) / side)
    mask = None
    if full_mask:
        mask = np.zeros((side, side), dtype=bool)
        mask[r0:r0 + h, c0:c0 + w] = local
    return cls, mask, box


def sample_label(config: SceneConfig, rng: np.random.Generator) -> tuple[BBox, int]:
    """The (box, class) a scene drawn with this rng state would carry, without rendering it."""
    cls, _, box = _place(config, rng, full_mask=False)
    return box, cls


def generate_scene(config: SceneConfig, rng: np.random.Generator) -> LabeledImage:
    """One shape of a uniform random class, size and position over a gradient background."""
    cls, mask, box = _place(config, rng)
    bg = _background(config, rng)
    color = _fill_color(bg[:, mask], config.min_contrast, rng)
    pixels = np.where(mask[None], color[:, None, None], bg).astype(np.float32)
    return LabeledImage(pixels, [(box, cls)], shape_mask=mask)


def generate_dataset(config: SceneConfig, count: int, seed: int) -> list[LabeledImage]:
    """Scene i uses its own stream ``default_rng([seed, i])``, so any subset is reproducible."""
    return [generate_scene(config, np.random.default_rng([seed, i])) for i in range(count)]


def stack_images(dataset) -> np.ndarray:
    if not dataset:
        raise DatasetError("dataset is empty")
    return np.stack([item.pixels for item in dataset]).astype(np.float32)


def stack_labels(dataset) -> tuple[list[BBox], np.ndarray]:
    boxes = [item.box for item in dataset]
    classes = np.array([item.class_id for item in dataset], dtype=np.int64)
    return boxes, classes


# -- disk format ------------------------------------------------------------------

def to_uint8(pixels: np.ndarray) -> np.ndarray:
    """3 x H x W in [-1, 1] -> H x W x 3 uint8."""
    q = np.rint((np.clip(pixels, -1, 1) + 1.0) * 127.5)
    return q.astype(np.uint8).transpose(1, 2, 0)


def from_uint8(array: np.ndarray) -> np.ndarray:
    return (array.astype(np.float32) / np.float32(127.5) - np.float32(1.0)).transpose(2, 0, 1)


def format_label(box: BBox, cls: int) -> str:
    return f"{int(cls)} {box.x1:.6f} {box.y1:.6f} {box.x2:.6f} {box.y2:.6f}"


def parse_labels(text: str, source: str) -> list[tuple[BBox, int]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            if len(parts) != 5:
                raise ValueError(f"expected 5 fields, got {len(parts)}")
            cls = int(parts[0])
            if cls < 0:
                raise ValueError(f"negative class id {cls}")
            box = BBox(*(float(p) for p in parts[1:]))
        except (ValueError, InvalidBoxError) as exc:
            raise DatasetError(f"{source} line {lineno}: {exc}") from exc
        out.append((box, cls))
    return out


def write_labeled(item: LabeledImage, directory: str | os.PathLike, index: int) -> None:
    d = Path(directory)
    stem = f"{index:06d}"
    Image.fromarray(to_uint8(item.pixels), mode="RGB").save(d / "images" / f"{stem}.png")
    text = "".join(format_label(b, c) + "\n" for b, c in item.labels)
    (d / "labels" / f"{stem}.txt").write_text(text)


def write_dataset(dataset, directory: str | os.PathLike) -> Path:
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    (d / "labels").mkdir(parents=True, exist_ok=True)
    for i, item in enumerate(dataset):
        write_labeled(item, d, i)
    return d


def _pairs(directory: Path) -> list[tuple[Path, Path]]:
    img_dir, lab_dir = directory / "images", directory / "labels"
    if not img_dir.exists() and not lab_dir.exists():
        return []
    images = {p.stem: p for p in sorted(img_dir.glob("*")) if p.suffix.lower() in IMAGE_SUFFIXES} \
        if img_dir.exists() else {}
    labels = {p.stem: p for p in sorted(lab_dir.glob("*.txt"))} if lab_dir.exists() else {}
    if images.keys() != labels.keys():
        only_img = sorted(images.keys() - labels.keys())
        only_lab = sorted(labels.keys() - images.keys())
        raise DatasetError(f"{directory}: images without labels {only_img[:5]}, labels without images {only_lab[:5]}")
    return [(images[k], labels[k]) for k in sorted(images)]


def _read_rgb(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise DatasetError(f"{path}: unreadable image ({exc})") from exc


def load_dataset(directory: str | os.PathLike) -> list[LabeledImage]:
    """Inverse of write_dataset; a missing or empty directory yields an empty list."""
    d = Path(directory)
    out = []
    for img_path, lab_path in _pairs(d):
        rgb = _read_rgb(img_path)
        labels = parse_labels(lab_path.read_text(), str(lab_path))
        out.append(LabeledImage(from_uint8(rgb), labels))
    return out


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """H x W x C float resize with half-pixel centers and edge clamping."""
    h, w = image.shape[:2]

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        i0 = np.floor(pos).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    y0, y1, ty = axis(h, height)
    x0, x1, tx = axis(w, width)
    img = image.astype(np.float64)
    top = img[y0][:, x0] + (img[y0][:, x1] - img[y0][:, x0]) * tx[None, :, None]
    bot = img[y1][:, x0] + (img[y1][:, x1] - img[y1][:, x0]) * tx[None, :, None]
    return top + (bot - top) * ty[:, None, None]


def load_external(directory: str | os.PathLike, side: int = 64) -> list[LabeledImage]:
    """Load a dataset directory of arbitrary-resolution images, resized to side x side."""
    out = []
    for img_path, lab_path in _pairs(Path(directory)):
        rgb = _read_rgb(img_path)
        small = resize_bilinear(rgb, side, side)
        pixels = (small / 127.5 - 1.0).astype(np.float32).transpose(2, 0, 1)
        labels = parse_labels(lab_path.read_text(), str(lab_path))
        out.append(LabeledImage(pixels, labels))
    return out
