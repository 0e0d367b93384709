"""Network checkpoints in the GABX container, with architecture recovered from tensor shapes."""
from __future__ import annotations

import hashlib
import os

import numpy as np

from ..diffmath import gabx
from ..netzoo import Critic, CriticSpec, Detector, DetectorSpec, Generator, GeneratorSpec, Network


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | os.PathLike, *networks: Network) -> None:
    state: dict[str, np.ndarray] = {}
    for net in networks:
        state.update(net.state_dict())
    tmp = f"{path}.tmp"
    gabx.save(tmp, state)
    os.replace(tmp, path)


def load_state(path: str | os.PathLike) -> dict[str, np.ndarray]:
    try:
        return gabx.load(path)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except gabx.ContainerError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc


def _layers(state, prefix: str) -> list[np.ndarray]:
    out = []
    while f"{prefix}/{len(out)}/weight" in state:
        out.append(state[f"{prefix}/{len(out)}/weight"])
    if not out:
        raise CheckpointError(f"checkpoint holds no '{prefix}' tensors")
    return out


def infer_generator_spec(state, image_side: int = 64) -> GeneratorSpec:
    ws = _layers(state, "generator")
    if (len(ws) - 2) % 2 or len(ws) < 4:
        raise CheckpointError(f"unexpected generator layer count {len(ws)}")
    cond = ws[0].shape[0]
    return GeneratorSpec(image_side=image_side, noise_channels=ws[2].shape[1] - cond, cond_channels=cond,
                         depth=(len(ws) - 2) // 2, base_width=ws[2].shape[0])


def infer_critic_spec(state, leaky_slope: float = 0.2) -> CriticSpec:
    ws = _layers(state, "critic")
    return CriticSpec(n_layers=len(ws) - 1, base_width=ws[0].shape[0], leaky_slope=leaky_slope)


def infer_detector_spec(state, image_side: int = 64, B: int = 1) -> DetectorSpec:
    ws = _layers(state, "detector")
    n = len(ws) - 1
    depth = ws[-1].shape[0]
    return DetectorSpec(S=image_side // 2 ** n, B=B, C=depth - 5 * B, n_layers=n, base_width=ws[0].shape[0])


def _build(cls, spec, state, dtype):
    net = cls(spec, seed=0, dtype=dtype)
    try:
        net.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(str(exc)) from exc
    return net


def load_generator(path_or_state, spec: GeneratorSpec | None = None, image_side: int = 64,
                   dtype=np.float32) -> Generator:
    state = path_or_state if isinstance(path_or_state, dict) else load_state(path_or_state)
    return _build(Generator, spec or infer_generator_spec(state, image_side), state, dtype)


def load_critic(path_or_state, spec: CriticSpec | None = None, dtype=np.float32) -> Critic:
    state = path_or_state if isinstance(path_or_state, dict) else load_state(path_or_state)
    return _build(Critic, spec or infer_critic_spec(state), state, dtype)


def load_detector(path_or_state, spec: DetectorSpec | None = None, image_side: int = 64,
                  dtype=np.float32) -> Detector:
    state = path_or_state if isinstance(path_or_state, dict) else load_state(path_or_state)
    return _build(Detector, spec or infer_detector_spec(state, image_side), state, dtype)


def parameter_digest(net: Network) -> str:
    """SHA-256 over parameter names and raw bytes; equal digests mean byte-identical weights."""
    h = hashlib.sha256()
    for name, p in net.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def file_digest(path: str | os.PathLike) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
