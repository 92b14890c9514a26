"""Tensor ring format: cores, reconstruction, parameter and compression arithmetic.

A ring over mode dims (L_0..L_{d-1}) with rank vector (R_0..R_{d-1}) holds d
3-order cores; core i has shape (R_{i-1 mod d}, L_i, R_i), so the edge after
the last core wraps back to R_0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensors import ShapeError, Tensor, check_shape

_I64_MAX = 2**63 - 1


def check_ranks(ranks: Sequence[int]) -> tuple[int, ...]:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) < 1:
        raise ShapeError("rank vector must have at least one element")
    for r in ranks:
        if r < 1:
            raise ShapeError(f"rank elements must be >= 1, got {ranks}")
    return ranks


@dataclass
class TensorRingFormat:
    cores: list[Tensor]
    mode_dims: tuple[int, ...]

    def __post_init__(self):
        self.mode_dims = check_shape(self.mode_dims)
        d = len(self.mode_dims)
        if len(self.cores) != d:
            raise ShapeError(f"{len(self.cores)} cores for {d} mode dims")
        for i, core in enumerate(self.cores):
            if core.ndim != 3:
                raise ShapeError(f"core {i} is {core.ndim}-order, want 3")
            if core.shape[1] != self.mode_dims[i]:
                raise ShapeError(
                    f"core {i} mode length {core.shape[1]} != dim {self.mode_dims[i]}"
                )
            nxt = self.cores[(i + 1) % d]
            if core.shape[2] != nxt.shape[0]:
                raise ShapeError(
                    f"rank mismatch between core {i} (right {core.shape[2]}) "
                    f"and core {(i + 1) % d} (left {nxt.shape[0]})"
                )

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(core.shape[2] for core in self.cores)

    @property
    def d(self) -> int:
        return len(self.cores)


def init_trf(mode_dims: Sequence[int], ranks: Sequence[int], seed: int) -> TensorRingFormat:
    """Gaussian cores, core i scaled by 1/sqrt(R_{i-1}*R_i); deterministic per seed."""
    mode_dims = check_shape(mode_dims)
    ranks = check_ranks(ranks)
    if len(ranks) != len(mode_dims):
        raise ShapeError(f"{len(ranks)} ranks for {len(mode_dims)} mode dims")
    d = len(mode_dims)
    rng = np.random.default_rng(seed)
    cores = []
    for i in range(d):
        r_prev, r_next = ranks[(i - 1) % d], ranks[i]
        sigma = 1.0 / math.sqrt(r_prev * r_next)
        cores.append(rng.normal(0.0, sigma, size=(r_prev, mode_dims[i], r_next)))
    return TensorRingFormat(cores, mode_dims)


def reconstruct(trf: TensorRingFormat) -> Tensor:
    """Close the ring: T[l_0..l_{d-1}] = trace of the ordered core-matrix product."""
    cores = trf.cores
    if len(cores) == 1:
        return np.trace(cores[0], axis1=0, axis2=2)
    acc = cores[0]
    for core in cores[1:]:
        acc = np.tensordot(acc, core, axes=([acc.ndim - 1], [0]))
    # acc axes: (R_{d-1}, L_0, ..., L_{d-1}, R_{d-1})
    return np.trace(acc, axis1=0, axis2=acc.ndim - 1)


def param_count(mode_dims: Sequence[int], ranks: Sequence[int]) -> int:
    mode_dims = check_shape(mode_dims)
    ranks = check_ranks(ranks)
    if len(ranks) != len(mode_dims):
        raise ShapeError(f"{len(ranks)} ranks for {len(mode_dims)} mode dims")
    d = len(mode_dims)
    total = 0
    for i in range(d):
        total += ranks[(i - 1) % d] * mode_dims[i] * ranks[i]
        if total > _I64_MAX:
            raise OverflowError(f"parameter count exceeds 64-bit range at core {i}")
    return total


def compression_ratio_linear(
    I: int,
    O: int,
    in_factors: Sequence[int],
    out_factors: Sequence[int],
    ranks: Sequence[int],
) -> float:
    """Dense I*O parameter count over the factored ring's parameter count.

    Uniform ranks give the closed-form linear-layer ratio; non-uniform rank
    vectors fall through to the generalized denominator.
    """
    in_factors = check_shape(in_factors)
    out_factors = check_shape(out_factors)
    if math.prod(in_factors) != I:
        raise ShapeError(f"in_factors {in_factors} do not multiply to I={I}")
    if math.prod(out_factors) != O:
        raise ShapeError(f"out_factors {out_factors} do not multiply to O={O}")
    dims = in_factors + out_factors
    ranks = check_ranks(ranks)
    if len(ranks) != len(dims):
        raise ShapeError(f"{len(ranks)} ranks for {len(dims)} factors")
    return (I * O) / param_count(dims, ranks)


def compression_ratio_cnn(
    K: int,
    Cin: int,
    Cout: int,
    in_factors: Sequence[int],
    out_factors: Sequence[int],
    R: int,
) -> float:
    """Conv-layer ratio with uniform rank R: K^2*Cin*Cout over the ring cost
    of the factored channels plus the K x K spatial core."""
    in_factors = check_shape(in_factors)
    out_factors = check_shape(out_factors)
    if math.prod(in_factors) != Cin:
        raise ShapeError(f"in_factors {in_factors} do not multiply to Cin={Cin}")
    if math.prod(out_factors) != Cout:
        raise ShapeError(f"out_factors {out_factors} do not multiply to Cout={Cout}")
    if R < 1:
        raise ShapeError(f"rank must be >= 1, got {R}")
    denom = sum(R * R * i for i in in_factors) + sum(R * R * o for o in out_factors) + K * K * R * R
    return (K * K * Cin * Cout) / denom


def pack_cores(trf: TensorRingFormat) -> bytes:
    """Flat little-endian float64 payload, cores concatenated in order."""
    return b"".join(np.ascontiguousarray(c, dtype="<f8").tobytes() for c in trf.cores)


def unpack_cores(
    mode_dims: Sequence[int], ranks: Sequence[int], payload: bytes
) -> TensorRingFormat:
    mode_dims = check_shape(mode_dims)
    ranks = check_ranks(ranks)
    d = len(mode_dims)
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    expected = param_count(mode_dims, ranks)
    if flat.size != expected:
        raise ShapeError(f"payload holds {flat.size} values, cores need {expected}")
    cores, off = [], 0
    for i in range(d):
        shape = (ranks[(i - 1) % d], mode_dims[i], ranks[i])
        n = math.prod(shape)
        cores.append(flat[off : off + n].reshape(shape).copy())
        off += n
    return TensorRingFormat(cores, mode_dims)
