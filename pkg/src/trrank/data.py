"""Synthetic regression data: a low-rank teacher matrix with noisy inputs.

Samples follow y = W(x + eps) with W = A B^T of a chosen true rank. The
noise draws are kept on the dataset so y can be replayed from W exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensors import Tensor

DIM = 144
N_TRAIN = 4000
N_TEST = 1000


@dataclass
class SyntheticDataset:
    train_x: Tensor  # (4000, 144)
    train_y: Tensor
    test_x: Tensor  # (1000, 144)
    test_y: Tensor
    train_noise: Tensor
    test_noise: Tensor
    true_matrix: Tensor  # (144, 144)
    seed: int
    true_rank: int
    x_variance: float
    noise_variance: float


def gen_synthetic(
    seed: int,
    true_rank: int = 4,
    x_variance: float = 0.05,
    noise_variance: float = 0.05,
) -> SyntheticDataset:
    if not (1 <= true_rank <= DIM):
        raise ValueError(f"true_rank must be in [1,{DIM}], got {true_rank}")
    rng = np.random.default_rng([seed, 0])
    # factor entries have variance 1/sqrt(DIM)
    f_std = (1.0 / np.sqrt(DIM)) ** 0.5
    A = rng.normal(0.0, f_std, size=(DIM, true_rank))
    B = rng.normal(0.0, f_std, size=(DIM, true_rank))
    W = A @ B.T
    n = N_TRAIN + N_TEST
    x = rng.normal(0.0, np.sqrt(x_variance), size=(n, DIM))
    eps = rng.normal(0.0, np.sqrt(noise_variance), size=(n, DIM))
    y = (x + eps) @ W.T
    return SyntheticDataset(
        train_x=x[:N_TRAIN],
        train_y=y[:N_TRAIN],
        test_x=x[N_TRAIN:],
        test_y=y[N_TRAIN:],
        train_noise=eps[:N_TRAIN],
        test_noise=eps[N_TRAIN:],
        true_matrix=W,
        seed=seed,
        true_rank=true_rank,
        x_variance=x_variance,
        noise_variance=noise_variance,
    )


def dump_dataset(data: SyntheticDataset, path: str | Path) -> None:
    """One JSON header line, then the arrays as raw little-endian float64."""
    header = {
        "seed": data.seed,
        "true_rank": data.true_rank,
        "counts": {"train": len(data.train_x), "test": len(data.test_x), "dim": DIM},
        "x_variance": data.x_variance,
        "noise_variance": data.noise_variance,
    }
    arrays = (
        data.true_matrix,
        data.train_x,
        data.train_y,
        data.train_noise,
        data.test_x,
        data.test_y,
        data.test_noise,
    )
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_dataset(path: str | Path) -> SyntheticDataset:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    n_train = header["counts"]["train"]
    n_test = header["counts"]["test"]
    dim = header["counts"]["dim"]
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    shapes = [
        (dim, dim),
        (n_train, dim),
        (n_train, dim),
        (n_train, dim),
        (n_test, dim),
        (n_test, dim),
        (n_test, dim),
    ]
    total = sum(a * b for a, b in shapes)
    if flat.size != total:
        raise ValueError(f"dataset payload holds {flat.size} values, expected {total}")
    arrays, off = [], 0
    for shape in shapes:
        n = shape[0] * shape[1]
        arrays.append(flat[off : off + n].reshape(shape).copy())
        off += n
    W, train_x, train_y, train_noise, test_x, test_y, test_noise = arrays
    return SyntheticDataset(
        train_x=train_x,
        train_y=train_y,
        test_x=test_x,
        test_y=test_y,
        train_noise=train_noise,
        test_noise=test_noise,
        true_matrix=W,
        seed=header["seed"],
        true_rank=header["true_rank"],
        x_variance=header["x_variance"],
        noise_variance=header["noise_variance"],
    )
