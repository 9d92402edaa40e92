"""The 3DFR change-detection network: feature streams, encoder, decoder, head.

Three streams are computed from a 50-frame history and the current frame:
AvFeat collapses the history to one temporal slice through three strided
multi-kernel stages, ConFeat encodes the current frame, and the per-pixel
temporal median gives a coarse background.  Their channel concatenation
goes through a three-stage conv/pool encoder and a three-stage
upsample/transposed-conv decoder, ending in a 1x1x1 transposed conv and a
sigmoid.

Gradients are composed by hand for this fixed pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import ops
from .errors import ShapeError
from .ops import ConvSpec
from .tensor import DTYPE, concat_channels, shape5, split_channels

HISTORY_LENGTH = 50
STREAM_WIDTH = 8
AVFEAT_STAGES = (  # (temporal kernel == stride)
    ("avfeat.s1", 5),
    ("avfeat.s2", 5),
    ("avfeat.s3", 2),
)
SPATIAL_BRANCHES = (1, 3, 5)
ENCODER_WIDTHS = ((8, 16), (16, 32), (32, 64))
DECODER_WIDTHS = ((64, 32), (32, 16), (16, 8))


@dataclass
class ConvLayerParams:
    name: str
    weights: np.ndarray  # (out, in, kt, kh, kw)
    bias: np.ndarray
    spec: ConvSpec
    transposed: bool = False

    @property
    def size(self) -> int:
        return self.weights.size + self.bias.size

    def copy(self) -> "ConvLayerParams":
        return ConvLayerParams(self.name, self.weights.copy(), self.bias.copy(), self.spec, self.transposed)


@dataclass
class NetworkParams:
    """Ordered, name-addressable collection of layer parameters."""

    layers: list[ConvLayerParams] = field(default_factory=list)

    def __post_init__(self):
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        self._index = {name: i for i, name in enumerate(names)}

    def __getitem__(self, name: str) -> ConvLayerParams:
        return self.layers[self._index[name]]

    def __iter__(self) -> Iterator[ConvLayerParams]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def names(self) -> list[str]:
        return [layer.name for layer in self.layers]

    def copy(self) -> "NetworkParams":
        return NetworkParams([layer.copy() for layer in self.layers])


def layer_layout(input_channels: int = 3, width: int = STREAM_WIDTH):
    """Yield ``(name, out, in, kernel, spec, transposed)`` for every layer in order.

    ``width`` is the channel count of each AvFeat/ConFeat branch.
    """
    cin = input_channels
    for stage, kt in AVFEAT_STAGES:
        for k in SPATIAL_BRANCHES:
            kernel = (kt, k, k)
            yield f"{stage}.k{k}", width, cin, kernel, ConvSpec.same(kernel, (kt, 1, 1)), False
        cin = width
    for k in SPATIAL_BRANCHES:
        kernel = (1, k, k)
        yield f"confeat.k{k}", width, input_channels, kernel, ConvSpec.same(kernel), False
    cin = 2 * width + input_channels
    for s, (w1, w2) in enumerate(ENCODER_WIDTHS, start=1):
        yield f"enc{s}.conv1", w1, cin, (1, 3, 3), ConvSpec.same((1, 3, 3)), False
        yield f"enc{s}.conv2", w2, w1, (1, 3, 3), ConvSpec.same((1, 3, 3)), False
        cin = w2
    # first transposed conv of each decoder stage keeps the incoming width
    for s, (w1, w2) in enumerate(DECODER_WIDTHS, start=1):
        yield f"dec{s}.tconv1", w1, cin, (1, 3, 3), ConvSpec.same((1, 3, 3)), True
        yield f"dec{s}.tconv2", w2, w1, (1, 3, 3), ConvSpec.same((1, 3, 3)), True
        cin = w2
    yield "head", 1, cin, (1, 1, 1), ConvSpec(), True


def init_params(seed: int = 0, input_channels: int = 3, width: int = STREAM_WIDTH) -> NetworkParams:
    """He-normal weights (variance 2/fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for name, out, cin, kernel, spec, transposed in layer_layout(input_channels, width):
        fan_in = cin * int(np.prod(kernel))
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out, cin, *kernel))
        layers.append(ConvLayerParams(name, w, np.zeros(out, dtype=DTYPE), spec, transposed))
    return NetworkParams(layers)


def param_count(p: NetworkParams) -> int:
    return sum(layer.size for layer in p)


# -- layer helpers --------------------------------------------------------


def _apply(layer: ConvLayerParams, x: np.ndarray) -> np.ndarray:
    fn = ops.tconv3d_forward if layer.transposed else ops.conv3d_forward
    return fn(x, layer.weights, layer.bias, layer.spec)


def _apply_backward(layer: ConvLayerParams, x, grad_out, grads, input_grad=True):
    fn = ops.tconv3d_backward if layer.transposed else ops.conv3d_backward
    gx, gw, gb = fn(x, layer.weights, layer.spec, grad_out, input_grad=input_grad)
    grads[layer.name] = (gw, gb)
    return gx


def _multi_branch(p: NetworkParams, prefix: str, x: np.ndarray) -> np.ndarray:
    return ops.branch_average([_apply(p[f"{prefix}.k{k}"], x) for k in SPATIAL_BRANCHES])


def _multi_branch_backward(p, prefix, x, grad_out, grads, input_grad):
    parts = ops.branch_average_backward(grad_out, len(SPATIAL_BRANCHES))
    gx = None
    for k, g in zip(SPATIAL_BRANCHES, parts):
        gk = _apply_backward(p[f"{prefix}.k{k}"], x, g, grads, input_grad)
        if input_grad:
            gx = gk if gx is None else gx + gk
    return gx


# -- streams --------------------------------------------------------------


def avfeat_forward(history: np.ndarray, p: NetworkParams):
    if shape5(history).t != HISTORY_LENGTH:
        raise ShapeError(f"history must hold {HISTORY_LENGTH} frames, got {history.shape[2]}")
    cache = {}
    x = history
    for stage, _ in AVFEAT_STAGES:
        cache[stage] = x
        x = _multi_branch(p, stage, x)
    return x, cache


def avfeat_backward(cache, p, grad_out, grads) -> None:
    g = grad_out
    for i, (stage, _) in reversed(list(enumerate(AVFEAT_STAGES))):
        g = _multi_branch_backward(p, stage, cache[stage], g, grads, input_grad=i > 0)


def confeat_forward(frame: np.ndarray, p: NetworkParams):
    if shape5(frame).t != 1:
        raise ShapeError(f"current frame must have temporal depth 1, got {frame.shape[2]}")
    return _multi_branch(p, "confeat", frame), {"confeat": frame}


def temporal_median(history: np.ndarray) -> np.ndarray:
    """Per-pixel, per-channel median over time (mean of middle pair for even M)."""
    if shape5(history).t == 0:
        raise ShapeError("temporal median of an empty history")
    return np.median(history, axis=2, keepdims=True)


def encoder_forward(msfeat: np.ndarray, p: NetworkParams):
    _, _, _, h, w = shape5(msfeat)
    if h % 8 or w % 8:
        raise ShapeError(f"encoder needs h and w divisible by 8, got {h}x{w}")
    cache = {}
    z = msfeat
    for s in range(1, len(ENCODER_WIDTHS) + 1):
        a = _apply(p[f"enc{s}.conv1"], z)
        b = _apply(p[f"enc{s}.conv2"], a)
        pooled, idx = ops.maxpool_122(b)
        cache[f"enc{s}"] = (z, a, pooled, idx)
        z = ops.relu(pooled)
    return z, cache


def encoder_backward(cache, p, grad_out, grads) -> np.ndarray:
    g = grad_out
    for s in range(len(ENCODER_WIDTHS), 0, -1):
        z, a, pooled, idx = cache[f"enc{s}"]
        g = ops.relu_backward(pooled, g)
        g = ops.maxpool_122_backward(idx, g)
        g = _apply_backward(p[f"enc{s}.conv2"], a, g, grads)
        g = _apply_backward(p[f"enc{s}.conv1"], z, g, grads)
    return g


def decoder_head_forward(mlen: np.ndarray, p: NetworkParams):
    cache = {}
    z = mlen
    for s in range(1, len(DECODER_WIDTHS) + 1):
        u = ops.upsample_122(z)
        a = _apply(p[f"dec{s}.tconv1"], u)
        b = _apply(p[f"dec{s}.tconv2"], a)
        cache[f"dec{s}"] = (u, a, b)
        z = ops.relu(b)
    cache["head"] = z
    prob = ops.sigmoid(_apply(p["head"], z))
    cache["prob"] = prob
    return prob, cache


def decoder_head_backward(cache, p, grad_prob, grads) -> np.ndarray:
    g = ops.sigmoid_backward(cache["prob"], grad_prob)
    g = _apply_backward(p["head"], cache["head"], g, grads)
    for s in range(len(DECODER_WIDTHS), 0, -1):
        u, a, b = cache[f"dec{s}"]
        g = ops.relu_backward(b, g)
        g = _apply_backward(p[f"dec{s}.tconv2"], a, g, grads)
        g = _apply_backward(p[f"dec{s}.tconv1"], u, g, grads)
        g = ops.upsample_122_backward(g)
    return g


# -- full pipeline --------------------------------------------------------


def forward(history: np.ndarray, current: np.ndarray, p: NetworkParams):
    """Probability map ``(n, 1, 1, h, w)`` and the cache needed by :func:`backward`."""
    if shape5(history)[3:] != shape5(current)[3:] or history.shape[:2] != current.shape[:2]:
        raise ShapeError(f"history {history.shape} and current {current.shape} disagree")
    av, av_cache = avfeat_forward(history, p)
    con, con_cache = confeat_forward(current, p)
    med = temporal_median(history)
    msfeat = concat_channels([av, con, med])
    mlen, enc_cache = encoder_forward(msfeat, p)
    prob, dec_cache = decoder_head_forward(mlen, p)
    cache = {
        "avfeat": av_cache,
        "confeat": con_cache,
        "split": (av.shape[1], con.shape[1], med.shape[1]),
        "encoder": enc_cache,
        "decoder": dec_cache,
    }
    return prob, cache


def backward(cache, p: NetworkParams, grad_prob: np.ndarray) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Parameter gradients ``{layer name: (grad_weights, grad_bias)}``."""
    grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    g = decoder_head_backward(cache["decoder"], p, grad_prob, grads)
    g = encoder_backward(cache["encoder"], p, g, grads)
    # the median slot has no parameters; its gradient is dropped
    g_av, g_con, _ = split_channels(g, cache["split"])
    _multi_branch_backward(p, "confeat", cache["confeat"]["confeat"], g_con, grads, input_grad=False)
    avfeat_backward(cache["avfeat"], p, g_av, grads)
    return {name: grads[name] for name in p.names}


def predict(history: np.ndarray, current: np.ndarray, p: NetworkParams) -> np.ndarray:
    return forward(history, current, p)[0]
