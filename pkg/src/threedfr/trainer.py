"""Plain SGD with a stepped learning-rate schedule, and checkpoint files."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import network, ops
from .datasets import SampleWindow
from .errors import (
    ArchitectureError,
    CheckpointCorruptError,
    CheckpointFormatError,
    CheckpointVersionError,
    ConfigurationError,
)
from .network import ConvLayerParams, NetworkParams

logger = logging.getLogger(__name__)

MAGIC = b"3DFR"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SGDConfig:
    lr_initial: float = 0.0006
    lr_decrement: float = 0.0002
    decrement_period: int = 20
    lr_floor: float = 0.0001
    batch_size: int = 1

    def __post_init__(self):
        if not self.lr_floor > 0:
            raise ConfigurationError("lr_floor must be positive")
        if self.lr_initial < self.lr_floor:
            raise ConfigurationError("lr_initial must be >= lr_floor")
        if self.decrement_period < 1:
            raise ConfigurationError("decrement_period must be >= 1")
        if self.batch_size != 1:
            raise ConfigurationError("only batch_size=1 is supported")


@dataclass
class TrainRun:
    seed: int
    epochs: int
    ordering: str = "seeded shuffle per epoch"
    loss_history: list[float] = field(default_factory=list)
    checkpoint_path: Path | None = None


def lr_at_epoch(cfg: SGDConfig, epoch: int) -> float:
    lr = cfg.lr_initial - cfg.lr_decrement * (epoch // cfg.decrement_period)
    # round away float noise so the schedule hits 0.0004, 0.0002 exactly
    return max(cfg.lr_floor, round(lr, 12))


def sgd_step(params: NetworkParams, grads, lr: float) -> NetworkParams:
    """Return new parameters ``w - lr * g``; ``params`` is left untouched."""
    out = []
    for layer in params:
        gw, gb = grads[layer.name]
        out.append(
            ConvLayerParams(layer.name, layer.weights - lr * gw, layer.bias - lr * gb,
                            layer.spec, layer.transposed)
        )
    return NetworkParams(out)


def sample_loss_and_grads(params: NetworkParams, window: SampleWindow):
    prob, cache = network.forward(window.history, window.current, params)
    loss, grad_prob = ops.bce_loss(prob, window.target, window.ignore_mask)
    return loss, network.backward(cache, params, grad_prob)


def train(
    samples: Sequence[SampleWindow],
    cfg: SGDConfig = SGDConfig(),
    epochs: int = 60,
    seed: int = 0,
    params: NetworkParams | None = None,
    on_epoch: Callable[[int, float, NetworkParams], None] | None = None,
) -> tuple[NetworkParams, TrainRun]:
    """Per-sample SGD over ``samples`` in a fresh seeded order each epoch."""
    if len(samples) == 0:
        raise ConfigurationError("training needs at least one sample")
    if params is None:
        params = network.init_params(seed)
    rng = np.random.default_rng([seed, 1])
    run = TrainRun(seed=seed, epochs=epochs)
    for epoch in range(epochs):
        lr = lr_at_epoch(cfg, epoch)
        total = 0.0
        for i in rng.permutation(len(samples)):
            loss, grads = sample_loss_and_grads(params, samples[int(i)])
            params = sgd_step(params, grads, lr)
            total += loss
        mean = total / len(samples)
        if not math.isfinite(mean):
            raise FloatingPointError(f"loss diverged at epoch {epoch + 1}")
        run.loss_history.append(mean)
        logger.info("epoch %d lr %.4g loss %.6f", epoch + 1, lr, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean, params)
    return params, run


# -- checkpoints ----------------------------------------------------------


def save_checkpoint(params: NetworkParams, path) -> None:
    """Little-endian: magic, version, layer count, then per layer its name,
    five weight dims, f64 weights, bias length and f64 bias."""
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params))]
    for layer in params:
        name = layer.name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name)) + name)
        chunks.append(struct.pack("<5I", *layer.weights.shape))
        chunks.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        chunks.append(struct.pack("<I", layer.bias.size))
        chunks.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointCorruptError(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, input_channels: int = 3) -> NetworkParams:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {data[:4]!r}")
    r = _Reader(data)
    r.take(4)
    version, count = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    layout = list(network.layer_layout(input_channels))
    layers = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointCorruptError(f"{path}: undecodable layer name") from exc
        dims = r.unpack("<5I")
        weights = np.frombuffer(r.take(8 * int(np.prod(dims))), dtype="<f8").reshape(dims)
        (nb,) = r.unpack("<I")
        bias = np.frombuffer(r.take(8 * nb), dtype="<f8")
        layers.append((name, weights.astype(np.float64), bias.astype(np.float64)))
    if r.pos != len(data):
        raise CheckpointCorruptError(f"{path}: {len(data) - r.pos} trailing bytes")
    names = [name for name, *_ in layers]
    expected = [entry[0] for entry in layout]
    if names != expected:
        raise ArchitectureError(f"{path}: layer names {names} do not match the network layout")
    out = []
    for (name, w, b), (_, n_out, n_in, kernel, spec, transposed) in zip(layers, layout):
        if w.shape[1:] != (n_in, *kernel) or b.size != w.shape[0]:
            raise ArchitectureError(f"{path}: layer {name} has shape {w.shape} / bias {b.size}")
        out.append(ConvLayerParams(name, w, b, spec, transposed))
    return NetworkParams(out)
