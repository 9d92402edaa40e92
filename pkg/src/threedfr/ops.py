"""Forward and backward kernels for every primitive the network uses.

Convolutions are computed directly in "output-shift" form: one product of
the tap-stacked weights with the temporally windowed input gives every
kernel tap's partial response at every padded position, and shifted sums
of those partials form the output.  The adjoint passes reuse the same
shifted-gradient matrix.  No FFT or Winograd transforms.  All functions are pure and operate on float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import DTYPE, shape5

BCE_EPS = 1e-7


@dataclass(frozen=True)
class ConvSpec:
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        if len(self.stride) != 3 or any(s < 1 for s in self.stride):
            raise ShapeError(f"stride must be three positive ints, got {self.stride}")
        if len(self.padding) != 3 or any(p < 0 for p in self.padding):
            raise ShapeError(f"padding must be three non-negative ints, got {self.padding}")

    @classmethod
    def same(cls, kernel: Sequence[int], stride=(1, 1, 1)) -> "ConvSpec":
        """Zero spatial padding that preserves h and w; no temporal padding."""
        _, kh, kw = kernel
        return cls(tuple(stride), (0, (kh - 1) // 2, (kw - 1) // 2))

    def output_dims(self, in_dims: Sequence[int], kernel: Sequence[int]) -> tuple[int, int, int]:
        out = tuple(
            (d + 2 * p - k) // s + 1
            for d, k, s, p in zip(in_dims, kernel, self.stride, self.padding)
        )
        if any(d + 2 * p - k < 0 for d, k, p in zip(in_dims, kernel, self.padding)) or min(out) < 1:
            raise ShapeError(
                f"input dims {tuple(in_dims)} with kernel {tuple(kernel)} and {self} "
                f"give non-positive output dims"
            )
        return out


@dataclass(frozen=True)
class PoolIndices:
    """Flat input offset of the selected maximum for every pooled element."""

    flat: np.ndarray
    input_shape: tuple[int, ...]


# -- convolution ----------------------------------------------------------


def _pad(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    pt, ph, pw = spec.padding
    if pt == ph == pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))


def _windows(x, spec, kt, to):
    """Padded input as a ``(c·kt, n·to·hp·wp)`` matrix.

    Row ``(c, dt)``, column ``(n, τ, y, x)`` holds padded input
    ``[n, c, τ·st + dt, y, x]``.
    """
    xp = _pad(x, spec)
    st = spec.stride[0]
    win = sliding_window_view(xp, kt, axis=2)[:, :, : st * (to - 1) + 1 : st]
    c = x.shape[1]
    return np.ascontiguousarray(win.transpose(1, 5, 0, 2, 3, 4)).reshape(c * kt, -1)


def _tap_matrix(weights):
    """``(o, c, kt, kh, kw)`` weights as a ``(kh·kw·o, c·kt)`` matrix."""
    o, c, kt, kh, kw = weights.shape
    return weights.transpose(3, 4, 0, 1, 2).reshape(kh * kw * o, c * kt)


def _spread(g, kh, kw, hp, wp, stride):
    """Place an output-shaped gradient at every spatial tap offset.

    Returns a ``(kh·kw·o, n·to·hp·wp)`` matrix whose block for tap
    ``(dy, dx)`` holds ``g[n, o, τ, y, x]`` at padded position
    ``(y·sh + dy, x·sw + dx)`` and zeros elsewhere.
    """
    n, o, to, ho, wo = g.shape
    _, sh, sw = stride
    out = np.zeros((kh, kw, o, n, to, hp, wp), dtype=DTYPE)
    gt = g.transpose(1, 0, 2, 3, 4)
    for dy in range(kh):
        for dx in range(kw):
            out[dy, dx, :, :, :, dy : dy + sh * (ho - 1) + 1 : sh, dx : dx + sw * (wo - 1) + 1 : sw] = gt
    return out.reshape(kh * kw * o, -1)


def _conv_fwd(x, weights, spec):
    n, c, t, h, w = shape5(x)
    o, i, kt, kh, kw = shape5(weights)
    if i != c:
        raise ShapeError(f"weights expect {i} input channels, input has {c}")
    to, ho, wo = spec.output_dims((t, h, w), (kt, kh, kw))
    _, sh, sw = spec.stride
    hp, wp = h + 2 * spec.padding[1], w + 2 * spec.padding[2]
    # every tap's partial response at every padded position, then shift-add
    z = (_tap_matrix(weights) @ _windows(x, spec, kt, to)).reshape(kh, kw, o, n, to, hp, wp)
    acc = np.zeros((o, n, to, ho, wo), dtype=DTYPE)
    for dy in range(kh):
        for dx in range(kw):
            acc += z[dy, dx, :, :, :, dy : dy + sh * (ho - 1) + 1 : sh, dx : dx + sw * (wo - 1) + 1 : sw]
    return np.ascontiguousarray(acc.transpose(1, 0, 2, 3, 4))


def _padded_hw(in_dims, spec):
    return in_dims[1] + 2 * spec.padding[1], in_dims[2] + 2 * spec.padding[2]


def _conv_weight_grad(x, grad_out, kernel_shape, spec, spread=None):
    o, c, kt, kh, kw = kernel_shape
    to = grad_out.shape[2]
    if spread is None:
        spread = _spread(grad_out, kh, kw, *_padded_hw(x.shape[2:], spec), spec.stride)
    gw = spread @ _windows(x, spec, kt, to).T
    return np.ascontiguousarray(gw.reshape(kh, kw, o, c, kt).transpose(2, 3, 4, 0, 1))


def _conv_input_grad(grad_out, weights, spec, in_dims, spread=None):
    n, o, to, ho, wo = grad_out.shape
    _, c, kt, kh, kw = weights.shape
    st = spec.stride[0]
    pt, ph, pw = spec.padding
    t, h, w = in_dims
    hp, wp = _padded_hw(in_dims, spec)
    if spread is None:
        spread = _spread(grad_out, kh, kw, hp, wp, spec.stride)
    gwin = (_tap_matrix(weights).T @ spread).reshape(c, kt, n, to, hp, wp)
    gxp = np.zeros((n, c, t + 2 * pt, hp, wp), dtype=DTYPE)
    for dt in range(kt):
        gxp[:, :, dt : dt + st * (to - 1) + 1 : st] += gwin[:, dt].transpose(1, 0, 2, 3, 4)
    return np.ascontiguousarray(gxp[:, :, pt : pt + t, ph : ph + h, pw : pw + w])


def conv3d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Cross-correlation plus per-channel bias; no activation."""
    out = _conv_fwd(x, weights, spec)
    out += np.asarray(bias, dtype=DTYPE)[None, :, None, None, None]
    return out


def conv3d_backward(x, weights, spec, grad_out, input_grad: bool = True):
    """Return ``(grad_x, grad_weights, grad_bias)``.

    ``grad_x`` is ``None`` when ``input_grad`` is false, which saves the
    most expensive pass for layers that read untrained inputs.
    """
    n, c, t, h, w = shape5(x)
    expected = (n, weights.shape[0], *spec.output_dims((t, h, w), weights.shape[2:]))
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")
    spread = _spread(grad_out, *weights.shape[3:], *_padded_hw((t, h, w), spec), spec.stride)
    gw = _conv_weight_grad(x, grad_out, weights.shape, spec, spread)
    gb = grad_out.sum(axis=(0, 2, 3, 4))
    gx = _conv_input_grad(grad_out, weights, spec, (t, h, w), spread) if input_grad else None
    return gx, gw, gb


def _tconv_out_dims(in_dims, kernel, spec):
    out = tuple(
        (d - 1) * s - 2 * p + k for d, k, s, p in zip(in_dims, kernel, spec.stride, spec.padding)
    )
    if min(out) < 1:
        raise ShapeError(f"transposed conv of {tuple(in_dims)} with {spec} gives dims {out}")
    return out


def tconv3d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Transposed convolution; ``weights`` is laid out ``(out, in, kt, kh, kw)``.

    Defined as the input-gradient map of the forward convolution whose
    weights are ``weights`` with the channel axes swapped.
    """
    _, c, t, h, w = shape5(x)
    o, i, kt, kh, kw = shape5(weights)
    if i != c:
        raise ShapeError(f"weights expect {i} input channels, input has {c}")
    out_dims = _tconv_out_dims((t, h, w), (kt, kh, kw), spec)
    conv_w = weights.transpose(1, 0, 2, 3, 4)
    out = _conv_input_grad(x, conv_w, spec, out_dims)
    out += np.asarray(bias, dtype=DTYPE)[None, :, None, None, None]
    return out


def tconv3d_backward(x, weights, spec, grad_out, input_grad: bool = True):
    _, _, t, h, w = shape5(x)
    expected = (x.shape[0], weights.shape[0], *_tconv_out_dims((t, h, w), weights.shape[2:], spec))
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")
    conv_w = weights.transpose(1, 0, 2, 3, 4)
    gw = _conv_weight_grad(grad_out, x, conv_w.shape, spec).transpose(1, 0, 2, 3, 4)
    gb = grad_out.sum(axis=(0, 2, 3, 4))
    gx = _conv_fwd(grad_out, conv_w, spec) if input_grad else None
    return gx, np.ascontiguousarray(gw), gb


# -- pooling / resampling -------------------------------------------------


def maxpool_122(x: np.ndarray) -> tuple[np.ndarray, PoolIndices]:
    n, c, t, h, w = shape5(x)
    if h % 2 or w % 2:
        raise ShapeError(f"max pooling needs even h and w, got {h}x{w}")
    win = x.reshape(n, c, t, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 3, 5, 4, 6)
    win = win.reshape(n, c, t, h // 2, w // 2, 4)
    # argmax returns the first maximum, i.e. the lowest flat index in the window
    k = win.argmax(axis=-1)
    out = np.take_along_axis(win, k[..., None], axis=-1)[..., 0]
    ni, ci, ti, yi, xi = np.indices(k.shape, sparse=True)
    flat = (((ni * c + ci) * t + ti) * h + 2 * yi + k // 2) * w + 2 * xi + k % 2
    return np.ascontiguousarray(out), PoolIndices(flat, x.shape)


def maxpool_122_backward(indices: PoolIndices, grad_out: np.ndarray) -> np.ndarray:
    if grad_out.shape != indices.flat.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != pooled shape {indices.flat.shape}")
    gx = np.zeros(int(np.prod(indices.input_shape)), dtype=DTYPE)
    gx[indices.flat.ravel()] = grad_out.ravel()
    return gx.reshape(indices.input_shape)


def upsample_122(x: np.ndarray) -> np.ndarray:
    shape5(x)
    return np.repeat(np.repeat(x, 2, axis=3), 2, axis=4)


def upsample_122_backward(grad_out: np.ndarray) -> np.ndarray:
    n, c, t, h, w = shape5(grad_out)
    if h % 2 or w % 2:
        raise ShapeError(f"upsample gradient needs even h and w, got {h}x{w}")
    return grad_out.reshape(n, c, t, h // 2, 2, w // 2, 2).sum(axis=(4, 6))


# -- pointwise ------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(x > 0, grad_out, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=DTYPE)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return y * (1.0 - y) * grad_out


def branch_average(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ShapeError("branch_average needs at least one tensor")
    for p in parts[1:]:
        if p.shape != parts[0].shape:
            raise ShapeError(f"cannot average shapes {p.shape} and {parts[0].shape}")
    # offsets from the first part, so k identical inputs average back exactly
    base = parts[0]
    acc = np.zeros_like(base, dtype=DTYPE)
    for p in parts[1:]:
        acc += p - base
    return base + acc / len(parts)


def branch_average_backward(grad_out: np.ndarray, k: int) -> list[np.ndarray]:
    g = grad_out / k
    return [g] * k


def bce_loss(pred: np.ndarray, target: np.ndarray, weight_mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Masked mean binary cross-entropy and its gradient w.r.t. ``pred``.

    The gradient is evaluated at the clamped prediction and passed straight
    through the clamp.
    """
    if not (pred.shape == target.shape == weight_mask.shape):
        raise ShapeError(f"shape mismatch: {pred.shape}, {target.shape}, {weight_mask.shape}")
    denom = max(1.0, float(weight_mask.sum()))
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    ll = target * np.log(p) + (1.0 - target) * np.log1p(-p)
    loss = -float((weight_mask * ll).sum()) / denom
    grad = weight_mask * ((1.0 - target) / (1.0 - p) - target / p) / denom
    return loss + 0.0, grad


# -- verification ---------------------------------------------------------


def finite_diff_check(
    f: Callable[..., tuple[float, Sequence[np.ndarray]]],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``f(*inputs)`` returns ``(scalar, grads)`` with one gradient per input.
    With ``max_coords`` set, each input is probed at that many randomly
    chosen coordinates instead of all of them.
    """
    inputs = [np.array(a, dtype=DTYPE, copy=True) for a in inputs]
    _, grads = f(*inputs)
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for k, (a, g) in enumerate(zip(inputs, grads)):
        flat = a.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        g = np.asarray(g).reshape(-1)
        for j in coords:
            orig = flat[j]
            flat[j] = orig + eps
            fp, _ = f(*inputs)
            flat[j] = orig - eps
            fm, _ = f(*inputs)
            flat[j] = orig
            num = (fp - fm) / (2 * eps)
            ana = g[j]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
