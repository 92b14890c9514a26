"""Dense tensor substrate: contraction, reshaping, index maps.

Tensors are plain numpy float64 arrays in row-major (C) order. Everything
here is a pure function; nothing mutates its inputs.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    """Raised when tensor shapes or index bounds do not line up."""


def as_tensor(data, shape: Sequence[int] | None = None) -> Tensor:
    t = np.asarray(data, dtype=np.float64)
    if shape is not None:
        t = reshape(t, shape)
    return t


def check_shape(dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    for d in dims:
        if d < 1:
            raise ShapeError(f"dimension lengths must be >= 1, got {dims}")
    # product must fit in uint64
    if math.prod(dims) >= 2**64:
        raise ShapeError(f"element count overflows 64 bits for shape {dims}")
    return dims


def contract(a: Tensor, b: Tensor, pairs: Sequence[tuple[int, int]]) -> Tensor:
    """Pairwise contraction: sum over each (axis-in-a, axis-in-b) pair.

    Result axes are a's unpaired axes in order, then b's unpaired axes in
    order. Fully paired inputs yield a 0-d tensor.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax_a = [p[0] for p in pairs]
    ax_b = [p[1] for p in pairs]
    if len(set(ax_a)) != len(ax_a) or len(set(ax_b)) != len(ax_b):
        raise ValueError(f"repeated axis in pairing {list(pairs)}")
    for i, j in pairs:
        if not (0 <= i < a.ndim) or not (0 <= j < b.ndim):
            raise ShapeError(f"axis pair ({i},{j}) out of range for shapes {a.shape}, {b.shape}")
        if a.shape[i] != b.shape[j]:
            raise ShapeError(
                f"contracted axes disagree: a axis {i} has length {a.shape[i]}, "
                f"b axis {j} has length {b.shape[j]}"
            )
    return np.tensordot(a, b, axes=(ax_a, ax_b))


def reshape(t: Tensor, new_shape: Sequence[int]) -> Tensor:
    new_shape = check_shape(new_shape)
    t = np.asarray(t)
    if t.size != math.prod(new_shape):
        raise ShapeError(f"cannot reshape {t.size} elements into {new_shape}")
    return t.reshape(new_shape)


def linear_index(multi: Sequence[int], shape: Sequence[int]) -> int:
    shape = check_shape(shape)
    if len(multi) != len(shape):
        raise ShapeError(f"index length {len(multi)} != shape length {len(shape)}")
    for i, (m, d) in enumerate(zip(multi, shape)):
        if not (0 <= m < d):
            raise ShapeError(f"index {m} out of range [0,{d}) at axis {i}")
    return int(np.ravel_multi_index(tuple(int(m) for m in multi), shape))


def multi_index(linear: int, shape: Sequence[int]) -> tuple[int, ...]:
    shape = check_shape(shape)
    n = math.prod(shape)
    if not (0 <= linear < n):
        raise ShapeError(f"linear index {linear} out of range [0,{n})")
    return tuple(int(v) for v in np.unravel_index(int(linear), shape))


def gaussian_tensor(shape: Sequence[int], mean: float, stddev: float, seed: int) -> Tensor:
    if stddev < 0:
        raise ValueError(f"stddev must be >= 0, got {stddev}")
    shape = check_shape(shape)
    rng = np.random.default_rng(seed)
    if stddev == 0:
        return np.full(shape, float(mean))
    return rng.normal(loc=mean, scale=stddev, size=shape)


def frobenius_distance(a: Tensor, b: Tensor) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))
