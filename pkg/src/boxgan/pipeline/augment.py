"""Writing generated images together with their requested boxes as a dataset."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from ..netzoo import Generator
from ..scenes import LabeledImage, write_labeled
from .evaluate import generate_for


def augment(generator: Generator, requests, count: int, out_dir: str | os.PathLike, seed: int = 0,
            batch: int = 32) -> list[LabeledImage]:
    """Generate ``count`` labeled images; each label is its request, unchanged.

    ``requests`` is either a sequence of (BBox, class) pairs, used in order and
    cycled when shorter than ``count``, or a sampler with a ``sample(rng)`` method.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    rng = np.random.default_rng([seed, 51])
    if hasattr(requests, "sample"):
        chosen = [requests.sample(rng) for _ in range(count)]
    else:
        pool = list(requests)
        if count and not pool:
            raise ValueError("empty request list")
        chosen = [pool[i % len(pool)] for i in range(count)]
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "labels").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write to {out}: {exc}") from exc
    noise_rng = np.random.default_rng([seed, 52])
    items = []
    for start in range(0, count, batch):
        chunk = chosen[start:start + batch]
        images = generate_for(generator, chunk, noise_rng, batch)
        for k, (image, (box, cls)) in enumerate(zip(images, chunk)):
            item = LabeledImage(image, [(box, int(cls))])
            write_labeled(item, out, start + k)
            items.append(item)
    return items
