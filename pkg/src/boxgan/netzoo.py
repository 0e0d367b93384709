"""U-Net generator with a mask encoder, patch critic, and toy grid detector.

Parameters are named ``"<network>/<layer-index>/<role>"`` (for example
``"generator/3/weight"``), which is also how they appear in GABX checkpoints.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .diffmath import (Tensor, concat, conv2d, conv_transpose2d, leaky_relu, mean, relu, reshape, sigmoid,
                       softmax, tanh, transpose)

LEAKY = 0.2


@dataclass(frozen=True)
class GeneratorSpec:
    image_side: int = 64
    noise_channels: int = 4
    cond_channels: int = 4
    depth: int = 4
    base_width: int = 32

    def __post_init__(self):
        if self.depth < 1 or self.image_side % (2 ** self.depth):
            raise ValueError(f"image side {self.image_side} not divisible by 2^{self.depth}")
        if self.noise_channels < 1 or self.cond_channels < 1 or self.base_width < 1:
            raise ValueError("noise, condition and base widths must be >= 1")

    def level_widths(self) -> list[int]:
        return [self.base_width * 2 ** min(k, 3) for k in range(self.depth)]


@dataclass(frozen=True)
class CriticSpec:
    n_layers: int = 3
    base_width: int = 32
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.n_layers < 1 or self.base_width < 1:
            raise ValueError("critic needs at least one stride-2 layer and positive width")

    def score_side(self, image_side: int) -> int:
        if image_side % (2 ** self.n_layers):
            raise ValueError(f"image side {image_side} not divisible by 2^{self.n_layers}")
        return image_side // 2 ** self.n_layers


@dataclass(frozen=True)
class DetectorSpec:
    S: int = 4
    B: int = 1
    C: int = 3
    n_layers: int = 4
    base_width: int = 16

    def __post_init__(self):
        if min(self.S, self.B, self.C, self.n_layers, self.base_width) < 1:
            raise ValueError("detector dimensions must be >= 1")

    @property
    def depth(self) -> int:
        return self.B * 5 + self.C

    @property
    def image_side(self) -> int:
        return self.S * 2 ** self.n_layers


class Conv:
    """Convolution layer; ``transpose=True`` makes it a stride-s upsampler."""

    def __init__(self, cin: int, cout: int, k: int, stride: int, pad: int, rng: np.random.Generator,
                 dtype=np.float32, transpose: bool = False, gain: float = math.sqrt(2.0 / (1 + LEAKY ** 2))):
        self.stride, self.pad, self.transpose = stride, pad, transpose
        fan_in = cin * k * k
        shape = (cin, cout, k, k) if transpose else (cout, cin, k, k)
        std = gain / math.sqrt(fan_in)
        self.weight = Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if self.transpose:
            return conv_transpose2d(x, self.weight, self.stride, self.pad, bias=self.bias)
        return conv2d(x, self.weight, self.bias, self.stride, self.pad)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[1] if self.transpose else self.weight.shape[0]


class Network:
    """Ordered layer list with named parameters and freeze support."""

    name = "network"

    def __init__(self):
        self.layers: list[Conv] = []
        self.frozen = False

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"{self.name}/{i}/weight", layer.weight))
            out.append((f"{self.name}/{i}/bias", layer.bias))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def freeze(self) -> "Network":
        self.frozen = True
        for p in self.parameters():
            p.requires_grad = False
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"checkpoint is missing '{name}'")
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"'{name}': checkpoint shape {arr.shape} != network shape {p.shape}")
            p.data = arr.astype(p.dtype).copy()


class Generator(Network):
    """Mask encoder + U-Net mapping (noise, encoded mask) to an RGB image in [-1, 1].

    Layers 0-1 form the condition encoder; then ``depth`` stride-2 encoder
    levels and ``depth`` transposed-conv decoder levels.
    """

    name = "generator"

    def __init__(self, spec: GeneratorSpec = GeneratorSpec(), seed: int = 0, dtype=np.float32):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng([seed, 1])
        m, z = spec.cond_channels, spec.noise_channels
        self.layers.append(Conv(1, m, 3, 1, 1, rng, dtype))
        self.layers.append(Conv(m, m, 3, 1, 1, rng, dtype))
        widths = spec.level_widths()
        cin = z + m
        for w in widths:
            self.layers.append(Conv(cin, w, 4, 2, 1, rng, dtype))
            cin = w
        # decoder level k upsamples to the extent of encoder level k-1 and concatenates with it
        for k in range(spec.depth - 1, 0, -1):
            self.layers.append(Conv(cin, widths[k - 1], 4, 2, 1, rng, dtype, transpose=True,
                                    gain=math.sqrt(2.0)))
            cin = 2 * widths[k - 1]
        self.layers.append(Conv(cin, 3, 4, 2, 1, rng, dtype, transpose=True, gain=1.0))

    def encode_condition(self, masks: Tensor) -> Tensor:
        h = leaky_relu(self.layers[0](masks), LEAKY)
        return self.layers[1](h)

    def __call__(self, noise: Tensor, masks: Tensor | np.ndarray | None = None) -> Tensor:
        return self.generate(noise, masks)

    def generate(self, noise: Tensor, masks: Tensor | np.ndarray | None = None) -> Tensor:
        spec = self.spec
        n, zc, h, w = noise.shape
        if zc != spec.noise_channels or h != spec.image_side or w != spec.image_side:
            raise ValueError(f"noise must be N x {spec.noise_channels} x {spec.image_side} x {spec.image_side}, "
                             f"got {noise.shape}")
        if masks is None:
            cond = Tensor(np.zeros((n, spec.cond_channels, h, w), dtype=noise.dtype))
        else:
            masks = masks if isinstance(masks, Tensor) else Tensor(np.asarray(masks, dtype=noise.dtype))
            if masks.ndim == 3:
                masks = reshape(masks, (masks.shape[0], 1, masks.shape[1], masks.shape[2]))
            if masks.shape != (n, 1, h, w):
                raise ValueError(f"mask batch {masks.shape} does not match noise batch {noise.shape}")
            cond = self.encode_condition(masks)
        x = concat([noise, cond], axis=1)
        skips = []
        for k in range(spec.depth):
            x = leaky_relu(self.layers[2 + k](x), LEAKY)
            skips.append(x)
        base = 2 + spec.depth
        for j, k in enumerate(range(spec.depth - 1, 0, -1)):
            x = relu(self.layers[base + j](x))
            skip = skips[k - 1]
            if x.shape != skip.shape:
                raise AssertionError(f"skip mismatch at level {k}: {x.shape} vs {skip.shape}")
            x = concat([x, skip], axis=1)
        return tanh(self.layers[-1](x))


class Critic(Network):
    """Fully convolutional patch critic; unbounded scores, no final squashing."""

    name = "critic"

    def __init__(self, spec: CriticSpec = CriticSpec(), seed: int = 0, dtype=np.float32, in_channels: int = 3):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng([seed, 2])
        gain = math.sqrt(2.0 / (1 + spec.leaky_slope ** 2))
        cin = in_channels
        for k in range(spec.n_layers):
            w = spec.base_width * 2 ** min(k, 3)
            self.layers.append(Conv(cin, w, 4, 2, 1, rng, dtype, gain=gain))
            cin = w
        self.layers.append(Conv(cin, 1, 1, 1, 0, rng, dtype, gain=1.0))

    def score_map(self, images: Tensor) -> Tensor:
        self.spec.score_side(images.shape[2])
        if images.shape[2] != images.shape[3]:
            raise ValueError(f"critic expects square images, got {images.shape}")
        x = images
        for layer in self.layers[:-1]:
            x = leaky_relu(layer(x), self.spec.leaky_slope)
        return self.layers[-1](x)

    def __call__(self, images: Tensor) -> Tensor:
        """Per-sample score: the mean of the patch score map."""
        return mean(self.score_map(images), axis=(1, 2, 3))

    def criticize(self, images: Tensor) -> tuple[Tensor, Tensor]:
        smap = self.score_map(images)
        return smap, mean(smap, axis=(1, 2, 3))


class Detector(Network):
    """Stride-2 conv stack to an S x S grid, then a 1x1 prediction head."""

    name = "detector"

    def __init__(self, spec: DetectorSpec = DetectorSpec(), seed: int = 0, dtype=np.float32, in_channels: int = 3):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng([seed, 3])
        cin = in_channels
        for k in range(spec.n_layers):
            w = spec.base_width * 2 ** min(k, 3)
            self.layers.append(Conv(cin, w, 4, 2, 1, rng, dtype))
            cin = w
        self.layers.append(Conv(cin, spec.depth, 1, 1, 0, rng, dtype, gain=1.0))

    def raw(self, images: Tensor) -> Tensor:
        spec = self.spec
        if images.ndim != 4 or images.shape[2] != spec.image_side or images.shape[3] != spec.image_side:
            raise ValueError(f"detector expects N x C x {spec.image_side} x {spec.image_side}, got {images.shape}")
        x = images
        for layer in self.layers[:-1]:
            x = leaky_relu(layer(x), LEAKY)
        return transpose(self.layers[-1](x), (0, 2, 3, 1))

    def __call__(self, images: Tensor) -> Tensor:
        """Grid batch N x S x S x (5B + C): sigmoided box/confidence slots, softmaxed classes."""
        logits = self.raw(images)
        nb = 5 * self.spec.B
        return concat([sigmoid(logits[..., :nb]), softmax(logits[..., nb:], axis=-1)], axis=-1)


def generate(generator: Generator, noise: Tensor, masks=None) -> Tensor:
    return generator.generate(noise, masks)


def criticize(critic: Critic, images: Tensor) -> tuple[Tensor, Tensor]:
    return critic.criticize(images)


def detect_forward(detector: Detector, images: Tensor) -> Tensor:
    return detector(images)


def spec_dict(spec) -> dict:
    return asdict(spec)
