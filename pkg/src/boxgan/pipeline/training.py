"""Detector pretraining, the two adversarial training steps, and the gated position loss."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..boxgeom import BBox, iou_array, rasterize_batch
from ..detloss import DetectionGrid, LossWeights, decode_batch, encode_batch, total_detection_loss
from ..diffmath import Adam, NonFiniteError, Tensor, getitem, grad, mean, no_grad, sum
from ..ganloss import GanBatchScores, clip_weights, critic_loss, generator_loss, gradient_penalty
from ..netzoo import Critic, Detector, Generator
from ..scenes import stack_images, stack_labels
from .checkpoint import parameter_digest, save_checkpoint
from .config import TrainConfig
from .metrics import CsvWriter, MetricsLog, MetricsRow
from .requests import SceneSampler


class DivergenceError(FloatingPointError):
    """A loss or gradient went non-finite; checkpoints already on disk are left untouched."""

    def __init__(self, message: str, iteration: int, last_checkpoint: str | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.last_checkpoint = last_checkpoint


# rng stream tags, so each consumer draws from its own reproducible sequence
_SPLIT, _DET, _STEP1, _STEP2, _EVAL = 21, 22, 11, 12, 31


def instance_noise_sigma(t: int, sigma0: float, decay_iters: int) -> float:
    """sigma0 * max(0, 1 - t / decay_iters); zero throughout when decay_iters is 0."""
    if decay_iters <= 0:
        return 0.0
    return sigma0 * max(0.0, 1.0 - t / decay_iters)


def learning_rate(config: TrainConfig, t: int) -> float:
    if config.lr_decay_every <= 0:
        return config.lr
    return config.lr * config.lr_decay ** (t // config.lr_decay_every)


def _check_finite(value: float, what: str, t: int, last_ckpt):
    if not math.isfinite(value):
        raise DivergenceError(f"{what} became non-finite at iteration {t}", t, last_ckpt)


def _step(opt: Adam, grads, t: int, last_ckpt):
    try:
        opt.step([g.data for g in grads])
    except NonFiniteError as exc:
        raise DivergenceError(f"non-finite gradient at iteration {t}: {exc}", t, last_ckpt) from exc


# -- detector pretraining ------------------------------------------------------

@dataclass
class DetectorReport:
    mean_iou: float
    class_accuracy: float
    n_holdout: int
    ious: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"mean_iou": self.mean_iou, "class_accuracy": self.class_accuracy, "n_holdout": self.n_holdout}


def split_indices(n: int, holdout: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng([seed, _SPLIT]).permutation(n)
    n_hold = max(1, int(round(n * holdout)))
    if n_hold >= n:
        raise ValueError(f"dataset of {n} images is too small for a {holdout:.0%} holdout")
    return np.sort(order[n_hold:]), np.sort(order[:n_hold])


def _mirror(box: BBox) -> BBox:
    return BBox(1.0 - box.x2, box.y1, 1.0 - box.x1, box.y2)


def detect_boxes(detector: Detector, images: np.ndarray, batch: int = 64):
    """Decoded most-confident detection per image (None when nothing decodes)."""
    out = []
    with no_grad():
        for i in range(0, len(images), batch):
            grids = detector(Tensor(images[i:i + batch])).data
            out.extend(decode_batch(grids, detector.spec.B))
    return out


def score_detections(detections, boxes, classes) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample IoU (0 for a missing detection) and class match."""
    pred = np.array([d.box.as_array() if d else [0, 0, 0, 0] for d in detections], dtype=np.float64)
    gt = np.array([b.as_array() for b in boxes], dtype=np.float64)
    found = np.array([d is not None for d in detections])
    with np.errstate(invalid="ignore", divide="ignore"):
        ious = np.where(found, iou_array(pred, gt), 0.0)
    match = np.array([d is not None and d.class_id == int(c) for d, c in zip(detections, classes)])
    return ious, match


def evaluate_detector(detector: Detector, dataset) -> DetectorReport:
    boxes, classes = stack_labels(dataset)
    ious, match = score_detections(detect_boxes(detector, stack_images(dataset)), boxes, classes)
    return DetectorReport(float(ious.mean()), float(match.mean()), len(dataset), ious)


def pretrain_detector(dataset, config: TrainConfig, out_dir: str | os.PathLike | None = None,
                      progress: Callable[[int, float], None] | None = None) -> tuple[Detector, DetectorReport]:
    """Train the grid detector on a 90/10 split (by default) and score the holdout."""
    spec = config.detector
    train_idx, hold_idx = split_indices(len(dataset), config.det_holdout, config.seed)
    images = stack_images(dataset)
    boxes, classes = stack_labels(dataset)
    labels = list(zip(boxes, classes.tolist()))
    targets = encode_batch(labels, spec.S, spec.B, spec.C).astype(np.float32)
    if config.det_flip:
        flipped = encode_batch([(_mirror(b), c) for b, c in labels], spec.S, spec.B, spec.C).astype(np.float32)
    detector = Detector(spec, seed=config.seed)
    params = detector.parameters()
    opt = Adam(params, lr=config.det_lr, beta1=0.9, beta2=0.999)
    rng = np.random.default_rng([config.seed, _DET])
    drop_at = int(config.det_iterations * config.det_lr_drop_at)
    out = Path(out_dir) if out_dir is not None else None
    for t in range(config.det_iterations):
        if t == drop_at:
            opt.lr = config.det_lr * 0.1
        idx = train_idx[rng.integers(0, len(train_idx), config.det_batch_size)]
        xb, tb = images[idx], targets[idx]
        if config.det_flip:
            flip = rng.random(len(idx)) < 0.5
            xb = np.where(flip[:, None, None, None], xb[..., ::-1], xb)
            tb = np.where(flip[:, None, None, None], flipped[idx], tb)
        pred = detector(Tensor(xb))
        loss = mean(total_detection_loss(DetectionGrid(pred, spec.B), DetectionGrid(tb, spec.B),
                                         config.loss_weights).total)
        value = loss.item()
        _check_finite(value, "detector loss", t + 1, None)
        _step(opt, grad(loss, params), t + 1, None)
        if progress is not None:
            progress(t + 1, value)
    report = evaluate_detector(detector, [dataset[i] for i in hold_idx])
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "detector.gabx", detector)
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return detector, report


# -- position loss -------------------------------------------------------------

@dataclass
class PositionLoss:
    loss: Tensor
    gates: np.ndarray

    @property
    def gate_frac(self) -> float:
        return float(self.gates.mean()) if self.gates.size else 0.0


def score_gates(fake_scores: np.ndarray, real_scores: np.ndarray, q: float) -> np.ndarray:
    """g_i = 1 when fake score i reaches the q-quantile of the real batch's scores."""
    threshold = np.quantile(np.asarray(real_scores, dtype=np.float64), q)
    return np.asarray(fake_scores, dtype=np.float64) >= threshold


def position_loss(detector: Detector, images: Tensor, requested, fake_scores, real_scores,
                  weights: LossWeights = LossWeights(), q: float = 0.5) -> PositionLoss:
    """Mean detection loss over the score-gated samples; zero when no gate is open.

    ``detector`` must be frozen; only ``images`` (hence the generator) receives gradient.
    """
    n = images.shape[0]
    if n == 0:
        raise ValueError("position loss needs a nonempty batch")
    if len(requested) != n or len(np.asarray(fake_scores)) != n:
        raise ValueError(f"batch sizes disagree: {n} images, {len(requested)} requests, "
                         f"{len(np.asarray(fake_scores))} scores")
    if any(p.requires_grad for p in detector.parameters()):
        raise ValueError("position loss expects a frozen detector")
    gates = score_gates(np.asarray(fake_scores), np.asarray(real_scores), q)
    open_idx = np.flatnonzero(gates)
    if open_idx.size == 0:
        return PositionLoss(Tensor(np.zeros((), dtype=images.dtype)), gates)
    spec = detector.spec
    chosen = [requested[i] for i in open_idx]
    target = encode_batch(chosen, spec.S, spec.B, spec.C).astype(images.dtype)
    gated = getitem(images, open_idx) if open_idx.size < n else images
    per = total_detection_loss(DetectionGrid(detector(gated), spec.B), DetectionGrid(target, spec.B), weights).total
    return PositionLoss(sum(per) * (1.0 / max(1, open_idx.size)), gates)


# -- adversarial training --------------------------------------------------------

@dataclass
class TrainResult:
    generator: Generator
    critic: Critic
    log: MetricsLog
    critic_updates: int = 0
    generator_updates: int = 0
    checkpoints: list[str] = field(default_factory=list)


def _noise(rng, n, spec):
    return rng.standard_normal((n, spec.noise_channels, spec.image_side, spec.image_side), dtype=np.float32)


def _perturb(x: np.ndarray, sigma: float, rng) -> np.ndarray:
    if sigma == 0.0:
        return x
    return x + np.float32(sigma) * rng.standard_normal(x.shape, dtype=np.float32)


def _adversarial(images: np.ndarray, config: TrainConfig, generator: Generator, critic: Critic,
                 detector: Detector | None, step: int, out_dir, progress) -> TrainResult:
    spec = config.generator
    conditional = detector is not None
    rng = np.random.default_rng([config.seed, _STEP2 if conditional else _STEP1])
    sampler = SceneSampler(config.scene)
    g_params, c_params = generator.parameters(), critic.parameters()
    g_opt = Adam(g_params, lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2)
    c_opt = Adam(c_params, lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2)
    bs, n_data = config.batch_size, len(images)
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    result = TrainResult(generator, critic, MetricsLog())
    last_ckpt = None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        writer = CsvWriter(out / "metrics.csv")

    def draw_masks():
        if not conditional:
            return None, None
        requests = sampler.draw(bs, rng)
        return requests, rasterize_batch([b for b, _ in requests], spec.image_side)

    t = 0
    try:
        for t in range(1, config.iterations + 1):
            lr = learning_rate(config, t - 1)
            g_opt.lr = c_opt.lr = lr
            sigma = instance_noise_sigma(t - 1, config.noise_sigma0, config.noise_decay_iters)
            for _ in range(config.n_critic):
                real = images[rng.integers(0, n_data, bs)]
                _, masks = draw_masks()
                with no_grad():
                    fake = generator(Tensor(_noise(rng, bs, spec)), masks).data
                real_in, fake_in = _perturb(real, sigma, rng), _perturb(fake, sigma, rng)
                scores = critic(Tensor(np.concatenate([real_in, fake_in])))
                batch = GanBatchScores(getitem(scores, slice(0, bs)), getitem(scores, slice(bs, 2 * bs)))
                loss = critic_loss(batch)
                gp_value = 0.0
                if config.critic_constraint == "gp" and config.lambda_gp > 0:
                    penalty = gradient_penalty(critic, real_in, fake_in, config.lambda_gp, rng)
                    gp_value = penalty.item()
                    loss = loss + penalty
                _check_finite(loss.item(), "critic loss", t, last_ckpt)
                _step(c_opt, grad(loss, c_params), t, last_ckpt)
                if config.critic_constraint == "clip":
                    clip_weights(c_params, config.clip_value)
                result.critic_updates += 1
            real_mean = float(batch.real.data.mean())
            fake_mean = float(batch.fake.data.mean())

            for _ in range(config.n_gen):
                requests, masks = draw_masks()
                fake = generator(Tensor(_noise(rng, bs, spec)), masks)
                fake_in = fake + Tensor(_perturb(np.zeros_like(fake.data), sigma, rng))
                fake_scores = critic(fake_in)
                loss = generator_loss(fake_scores)
                gen_value = loss.item()
                pos_value, gate_frac = 0.0, 0.0
                if conditional and config.mu > 0:
                    with no_grad():
                        real = images[rng.integers(0, n_data, bs)]
                        real_scores = critic(Tensor(_perturb(real, sigma, rng))).data
                    pos = position_loss(detector, fake, requests, fake_scores.data, real_scores,
                                        config.loss_weights, config.gate_quantile)
                    pos_value, gate_frac = pos.loss.item(), pos.gate_frac
                    loss = loss + pos.loss * config.mu
                _check_finite(loss.item(), "generator loss", t, last_ckpt)
                _step(g_opt, grad(loss, g_params), t, last_ckpt)
                result.generator_updates += 1

            row = MetricsRow(t, real_mean, fake_mean, real_mean - fake_mean, gp_value, gen_value,
                             pos_value, gate_frac)
            result.log.append(row)
            if writer is not None:
                writer.write(row)
            if progress is not None:
                progress(row)
            if out is not None and config.checkpoint_every and t % config.checkpoint_every == 0:
                path = out / "checkpoints" / f"step{step}_iter_{t:06d}.gabx"
                save_checkpoint(path, generator, critic)
                last_ckpt = str(path)
                result.checkpoints.append(last_ckpt)
    except FloatingPointError as exc:
        if isinstance(exc, DivergenceError):
            raise
        raise DivergenceError(f"non-finite value at iteration {t}: {exc}", t, last_ckpt) from exc
    finally:
        if writer is not None:
            writer.close()
    if out is not None:
        save_checkpoint(out / "final.gabx", generator, critic)
    return result


def train_step1(dataset, config: TrainConfig, out_dir: str | os.PathLike | None = None,
                progress: Callable[[MetricsRow], None] | None = None) -> TrainResult:
    """Unconditional WGAN training: condition channels stay zero."""
    images = stack_images(dataset) if not isinstance(dataset, np.ndarray) else dataset
    generator = Generator(config.generator, seed=config.seed)
    critic = Critic(config.critic, seed=config.seed)
    return _adversarial(images, config, generator, critic, None, 1, out_dir, progress)


def train_step2(step1_state: dict, dataset, detector: Detector, config: TrainConfig,
                out_dir: str | os.PathLike | None = None,
                progress: Callable[[MetricsRow], None] | None = None) -> TrainResult:
    """Mask-conditioned training from a Step-1 state with the frozen detector's position loss."""
    images = stack_images(dataset) if not isinstance(dataset, np.ndarray) else dataset
    generator = Generator(config.generator, seed=config.seed)
    critic = Critic(config.critic, seed=config.seed)
    generator.load_state_dict(step1_state)
    critic.load_state_dict(step1_state)
    detector.freeze()
    before = parameter_digest(detector)
    result = _adversarial(images, config, generator, critic, detector, 2, out_dir, progress)
    if parameter_digest(detector) != before:
        raise RuntimeError("detector parameters changed during Step 2")
    return result
