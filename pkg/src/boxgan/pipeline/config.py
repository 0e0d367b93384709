"""Training configuration with a JSON mirror of the dataclass fields."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

from ..detloss import LossWeights
from ..netzoo import CriticSpec, DetectorSpec, GeneratorSpec
from ..scenes import SceneConfig


class ConfigError(ValueError):
    pass


_NESTED = {
    "generator": GeneratorSpec,
    "critic": CriticSpec,
    "detector": DetectorSpec,
    "scene": SceneConfig,
    "loss_weights": LossWeights,
}


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 16
    n_critic: int = 5
    n_gen: int = 1
    iterations: int = 2000
    lr: float = 1e-4
    lr_decay: float = 1.0  # multiplicative factor applied every lr_decay_every iterations
    lr_decay_every: int = 0  # 0 disables the schedule
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    critic_constraint: str = "gp"  # "gp" or "clip"
    lambda_gp: float = 10.0
    clip_value: float = 0.01
    noise_sigma0: float = 0.05
    noise_decay_iters: int = 500
    mu: float = 1.0
    gate_quantile: float = 0.5
    checkpoint_every: int = 500
    det_iterations: int = 3000
    det_batch_size: int = 32
    det_lr: float = 1e-3
    det_lr_drop_at: float = 0.7  # fraction of det_iterations after which det_lr is divided by 10
    det_holdout: float = 0.1
    det_flip: bool = True
    loss_weights: LossWeights = field(default_factory=LossWeights)
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    critic: CriticSpec = field(default_factory=CriticSpec)
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    scene: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self):
        problems = []
        rates = ("lr", "lambda_gp", "clip_value", "noise_sigma0", "mu", "det_lr", "lr_decay")
        problems += [f"{r} must be >= 0" for r in rates if getattr(self, r) < 0]
        if self.n_critic < 1 or self.n_gen < 1:
            problems.append("n_critic and n_gen must be >= 1")
        if self.batch_size < 1 or self.det_batch_size < 1:
            problems.append("batch sizes must be >= 1")
        if min(self.iterations, self.det_iterations, self.noise_decay_iters, self.checkpoint_every,
               self.lr_decay_every) < 0:
            problems.append("iteration counts must be >= 0")
        if not 0.0 <= self.gate_quantile <= 1.0:
            problems.append("gate_quantile must lie in [0, 1]")
        if not 0.0 < self.det_holdout < 1.0:
            problems.append("det_holdout must lie in (0, 1)")
        if self.critic_constraint not in ("gp", "clip"):
            problems.append(f"critic_constraint must be 'gp' or 'clip', got {self.critic_constraint!r}")
        if self.generator.image_side != self.scene.image_side:
            problems.append("generator.image_side must equal scene.image_side")
        if self.detector.image_side != self.scene.image_side:
            problems.append(f"detector grid S*2^n_layers = {self.detector.image_side} must equal scene.image_side")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key in _NESTED:
                kwargs[key] = _nested(key, value)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TrainConfig":
        try:
            text = open(path).read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _nested(key: str, value):
    kind = _NESTED[key]
    if isinstance(value, kind):
        return value
    if not isinstance(value, dict):
        raise ConfigError(f"'{key}' must be an object")
    known = {f.name for f in fields(kind)}
    unknown = sorted(set(value) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{key}': {', '.join(unknown)}")
    try:
        if key == "scene" and "size_range" in value:
            value = dict(value, size_range=tuple(value["size_range"]))
        return kind(**value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{key}': {exc}") from exc
