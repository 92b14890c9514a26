"""Trainable ring-factored linear maps.

A TRLinearModel carries a tensor ring over (I_1..I_alpha, O_1..O_beta) and
acts as the dense map y = M x, M of shape (prod O, prod I), without ever
building M: the input vector is tensorized over the I dims, contracted
through the input cores, then through the merged output-core block, which
closes the ring. The index convention is row-major on both sides, i.e.
M[o, i] = T[i_1..i_alpha, o_1..o_beta] with i, o the row-major flattenings.

Gradients exploit that the loss gradient enters linearly: one gemm forms
the batch moment D = X^T G over the mode grid, after which each core's
gradient is a small batch-free contraction of D with the remaining cores.
Adjacent core pairs are pre-merged once per step and shared across holes;
this keeps every contraction BLAS-shaped (a naive einsum over the same
operands picks a catastrophic path).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import SyntheticDataset
from .ring import TensorRingFormat, init_trf
from .tensors import ShapeError, Tensor


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss."""


@dataclass
class TRLinearModel:
    trf: TensorRingFormat
    alpha: int
    beta: int

    def __post_init__(self):
        d = self.trf.d
        if self.alpha < 1 or self.beta < 1 or self.alpha + self.beta != d:
            raise ShapeError(
                f"alpha={self.alpha}, beta={self.beta} do not split {d} modes"
            )

    @property
    def in_dims(self) -> tuple[int, ...]:
        return self.trf.mode_dims[: self.alpha]

    @property
    def out_dims(self) -> tuple[int, ...]:
        return self.trf.mode_dims[self.alpha :]

    @property
    def input_size(self) -> int:
        return math.prod(self.in_dims)

    @property
    def output_size(self) -> int:
        return math.prod(self.out_dims)


def make_model(
    in_dims, out_dims, ranks, seed: int
) -> TRLinearModel:
    dims = tuple(in_dims) + tuple(out_dims)
    return TRLinearModel(init_trf(dims, ranks, seed), len(tuple(in_dims)), len(tuple(out_dims)))


@dataclass
class TRStack:
    """Layered composition of TR-linear maps, trained end to end."""

    layers: list[TRLinearModel]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("stack needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.output_size != b.input_size:
                raise ShapeError(
                    f"layer output {a.output_size} feeds layer input {b.input_size}"
                )

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def output_size(self) -> int:
        return self.layers[-1].output_size


def _merge_block(cores: list[Tensor]) -> Tensor:
    """Chain a contiguous run of cores into (R_left, modes..., R_right)."""
    acc = cores[0]
    for core in cores[1:]:
        acc = np.tensordot(acc, core, axes=([acc.ndim - 1], [0]))
    return acc


def _forward_layer(model: TRLinearModel, x2: Tensor) -> Tensor:
    cores = model.trf.cores
    alpha = model.alpha
    B = x2.shape[0]
    s = x2.reshape(B, *model.in_dims)
    s = np.tensordot(s, cores[0], axes=([1], [1]))
    for i in range(1, alpha):
        s = np.tensordot(s, cores[i], axes=([1, s.ndim - 1], [1, 0]))
    # s: (B, R_{d-1}, R_{alpha-1})
    out_block = _merge_block(cores[alpha:])  # (R_{alpha-1}, O.., R_{d-1})
    y = np.tensordot(s, out_block, axes=([2, 1], [0, out_block.ndim - 1]))
    return y.reshape(B, model.output_size)


def _backward_layer(model: TRLinearModel, g2: Tensor) -> Tensor:
    """Vector-Jacobian product: rows g -> g M, tensorized over the O dims."""
    cores = model.trf.cores
    alpha, d = model.alpha, model.trf.d
    B = g2.shape[0]
    s = g2.reshape(B, *model.out_dims)
    s = np.tensordot(s, cores[alpha], axes=([1], [1]))
    for j in range(alpha + 1, d):
        s = np.tensordot(s, cores[j], axes=([1, s.ndim - 1], [1, 0]))
    # s: (B, R_{alpha-1}, R_{d-1})
    in_block = _merge_block(cores[:alpha])  # (R_{d-1}, I.., R_{alpha-1})
    gx = np.tensordot(s, in_block, axes=([1, 2], [in_block.ndim - 1, 0]))
    return gx.reshape(B, model.input_size)


def _moment_grads(model: TRLinearModel, x2: Tensor, g2: Tensor) -> list[Tensor]:
    """Per-core gradients from the batch moment D[i-modes, o-modes] = X^T G."""
    cores = model.trf.cores
    d = model.trf.d
    B = x2.shape[0]
    D = np.tensordot(
        x2.reshape(B, *model.in_dims), g2.reshape(B, *model.out_dims), axes=([0], [0])
    )
    if d == 1:
        core = cores[0]
        g = np.zeros_like(core)
        idx = np.arange(core.shape[0])
        g[idx, :, idx] = D
        return [g]
    if d == 2:
        out = []
        for k in range(2):
            other = 1 - k
            t = np.tensordot(D, cores[other], axes=([other], [1]))
            out.append(np.ascontiguousarray(t.transpose(2, 0, 1)))
        return out
    pairs = [
        np.tensordot(cores[i], cores[(i + 1) % d], axes=([2], [0])) for i in range(d)
    ]
    out = []
    for k in range(d):
        a, b = (k + 1) % d, (k + 2) % d
        t = np.tensordot(D, pairs[a], axes=([a, b], [1, 2]))
        rem = [m for m in range(d) if m not in (a, b)]
        for step in range(3, d):
            c = (k + step) % d
            pos = rem.index(c)
            t = np.tensordot(t, cores[c], axes=([pos, t.ndim - 1], [1, 0]))
            rem.remove(c)
        # t: (L_k, R_k, R_{k-1})
        out.append(np.ascontiguousarray(t.transpose(2, 0, 1)))
    return out


def forward(model: TRLinearModel | TRStack, x: Tensor) -> Tensor:
    """Apply the ring-factored map; accepts one vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != model.input_size:
        raise ShapeError(
            f"input length {x.shape[-1] if x.ndim else 0} != expected {model.input_size}"
        )
    if isinstance(model, TRStack):
        h = x2
        for layer in model.layers:
            h = _forward_layer(layer, h)
        y = h
    else:
        y = _forward_layer(model, x2)
    return y[0] if single else y


def mse_loss(pred: Tensor, target: Tensor) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def _trainable_cores(model: TRLinearModel | TRStack) -> list[Tensor]:
    if isinstance(model, TRStack):
        return [c for layer in model.layers for c in layer.trf.cores]
    return list(model.trf.cores)


def _batch_step(model: TRLinearModel | TRStack, x2: Tensor, y2: Tensor):
    """Forward plus per-core gradients of the batch MSE, layer-major order."""
    if isinstance(model, TRStack):
        hs = [x2]
        for layer in model.layers:
            hs.append(_forward_layer(layer, hs[-1]))
        pred = hs[-1]
        g = 2.0 * (pred - y2) / pred.size
        grads: list[Tensor] = []
        for k in range(len(model.layers) - 1, -1, -1):
            layer = model.layers[k]
            grads = _moment_grads(layer, hs[k], g) + grads
            if k > 0:
                g = _backward_layer(layer, g)
        return pred, grads
    pred = _forward_layer(model, x2)
    g = 2.0 * (pred - y2) / pred.size
    return pred, _moment_grads(model, x2, g)


def core_gradients(model: TRLinearModel | TRStack, batch_x: Tensor, batch_y: Tensor) -> list[Tensor]:
    """Analytic d(mse_loss(forward(x), y))/d(core) for every core."""
    x2 = np.asarray(batch_x, dtype=np.float64)
    y2 = np.asarray(batch_y, dtype=np.float64)
    if x2.ndim == 1:
        x2 = x2[None, :]
    if y2.ndim == 1:
        y2 = y2[None, :]
    if x2.shape[1] != model.input_size or y2.shape[1] != model.output_size:
        raise ShapeError(
            f"batch dims ({x2.shape[1]}, {y2.shape[1]}) != model "
            f"({model.input_size}, {model.output_size})"
        )
    if x2.shape[0] != y2.shape[0]:
        raise ShapeError(f"batch sizes differ: {x2.shape[0]} vs {y2.shape[0]}")
    _, grads = _batch_step(model, x2, y2)
    return grads


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 100
    batch_size: int = 128
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 233

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_decay_every < 1:
            raise ValueError(f"lr_decay_every must be >= 1, got {self.lr_decay_every}")


@dataclass
class TrainReport:
    final_test_mse: float
    per_epoch_train_loss: list[float] = field(default_factory=list)
    wall_clock_s: float = 0.0
    epochs_run: int = 0


def evaluate(model: TRLinearModel | TRStack, data: SyntheticDataset) -> float:
    """Test-split MSE; no parameter updates."""
    return mse_loss(forward(model, data.test_x), data.test_y)


def train(
    model: TRLinearModel | TRStack, data: SyntheticDataset, cfg: TrainConfig
) -> tuple[TRLinearModel | TRStack, TrainReport]:
    """Mini-batch Adam with step lr decay, in place on the model's cores.

    The shuffle stream comes from one generator seeded by cfg.seed, advanced
    once per epoch, so a fixed seed fixes the whole batch order. Epoch e
    (1-based) trains at learning_rate * factor^(e // every).
    """
    t0 = time.perf_counter()
    cores = _trainable_cores(model)
    m_state = [np.zeros_like(c) for c in cores]
    v_state = [np.zeros_like(c) for c in cores]
    rng = np.random.default_rng(cfg.seed)
    n = data.train_x.shape[0]
    out_size = model.output_size
    losses: list[float] = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)
        perm = rng.permutation(n)
        sse = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            xb = data.train_x[idx]
            yb = data.train_y[idx]
            pred, grads = _batch_step(model, xb, yb)
            sse += float(np.sum((pred - yb) ** 2))
            step += 1
            b1c = 1.0 - cfg.beta1**step
            b2c = 1.0 - cfg.beta2**step
            for core, g, m, v in zip(cores, grads, m_state, v_state):
                m *= cfg.beta1
                m += (1.0 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1.0 - cfg.beta2) * g * g
                core -= lr * (m / b1c) / (np.sqrt(v / b2c) + cfg.eps)
        epoch_loss = sse / (n * out_size)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}")
        losses.append(epoch_loss)
    report = TrainReport(
        final_test_mse=evaluate(model, data),
        per_epoch_train_loss=losses,
        wall_clock_s=time.perf_counter() - t0,
        epochs_run=len(losses),
    )
    return model, report
