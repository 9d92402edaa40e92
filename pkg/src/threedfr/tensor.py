"""Rank-5 tensor helpers.

Every tensor in the package is a C-contiguous ``float64`` numpy array laid
out as ``(n, c, t, h, w)``; weights reuse the same layout as
``(out, in, kt, kh, kw)``.  These helpers add the checks numpy does not do
on its own (degenerate dims, strict bounds, channel concatenation rules).
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import ShapeError, SizeError

DTYPE = np.float64
_MAX_ELEMENTS = 2**40


class Shape5(NamedTuple):
    n: int
    c: int
    t: int
    h: int
    w: int

    @property
    def size(self) -> int:
        return self.n * self.c * self.t * self.h * self.w


def shape5(x: np.ndarray) -> Shape5:
    if x.ndim != 5:
        raise ShapeError(f"expected a rank-5 tensor, got shape {x.shape}")
    return Shape5(*x.shape)


def alloc(shape: Sequence[int], fill: float = 0.0) -> np.ndarray:
    shape = Shape5(*(int(d) for d in shape))
    if any(d < 1 for d in shape):
        raise SizeError(f"all dimensions must be >= 1, got {tuple(shape)}")
    if shape.size > _MAX_ELEMENTS:
        raise SizeError(f"element count {shape.size} exceeds limit")
    return np.full(shape, fill, dtype=DTYPE)


def _check_index(x: np.ndarray, idx: Sequence[int]) -> tuple[int, ...]:
    shp = shape5(x)
    if len(idx) != 5:
        raise IndexError(f"expected 5 indices, got {len(idx)}")
    idx = tuple(int(i) for i in idx)
    for axis, (i, d) in enumerate(zip(idx, shp)):
        if not 0 <= i < d:
            raise IndexError(f"index {i} out of bounds for axis {axis} of size {d}")
    return idx


def get(x: np.ndarray, idx: Sequence[int]) -> float:
    return float(x[_check_index(x, idx)])


def set(x: np.ndarray, idx: Sequence[int], value: float) -> None:  # noqa: A001
    x[_check_index(x, idx)] = value


def flat_offset(shape: Sequence[int], idx: Sequence[int]) -> int:
    """Row-major offset of ``idx`` (w varies fastest)."""
    off = 0
    for i, d in zip(idx, shape):
        off = off * d + i
    return off


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    ref = shape5(parts[0])
    for p in parts[1:]:
        s = shape5(p)
        if (s.n, s.t, s.h, s.w) != (ref.n, ref.t, ref.h, ref.w):
            raise ShapeError(f"cannot concatenate {tuple(s)} with {tuple(ref)} along channels")
    return np.concatenate(parts, axis=1)


def split_channels(x: np.ndarray, widths: Sequence[int]) -> list[np.ndarray]:
    """Inverse of :func:`concat_channels` for the given channel widths."""
    if sum(widths) != shape5(x).c:
        raise ShapeError(f"widths {tuple(widths)} do not sum to {x.shape[1]} channels")
    bounds = np.cumsum(widths)[:-1]
    return [np.ascontiguousarray(p) for p in np.split(x, bounds, axis=1)]
