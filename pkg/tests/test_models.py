import numpy as np
import pytest

from trrank.data import gen_synthetic
from trrank.models import (
    DivergenceError,
    TRStack,
    TrainConfig,
    core_gradients,
    evaluate,
    forward,
    make_model,
    mse_loss,
    train,
)
from trrank.ring import reconstruct
from trrank.tensors import ShapeError


def small_model(seed=0, ranks=(2, 3, 2, 3)):
    return make_model((3, 4), (2, 5), ranks, seed)


def materialized_matrix(model):
    """The weight matrix the ring encodes: row-major input index against
    row-major output index."""
    t = reconstruct(model.trf)
    return t.reshape(model.input_size, model.output_size)


def fd_gradients(model, x, y, h=1e-5):
    """Central finite differences of the batch MSE per core element."""
    grads = []
    for core in model.trf.cores:
        g = np.zeros_like(core)
        flat = core.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = mse_loss(forward(model, x), y)
            flat[i] = keep - h
            down = mse_loss(forward(model, x), y)
            flat[i] = keep
            gf[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def fd_agreement(analytic, numeric):
    """Worst per-core error relative to the core's gradient scale."""
    worst = 0.0
    for a, f in zip(analytic, numeric):
        scale = max(float(np.max(np.abs(f))), 1e-12)
        worst = max(worst, float(np.max(np.abs(a - f))) / scale)
    return worst


class TestForward:
    def test_zero_cores_zero_output(self, rng):
        model = small_model()
        for c in model.trf.cores:
            c[:] = 0.0
        x = rng.standard_normal(12)
        assert np.all(forward(model, x) == 0.0)

    def test_matches_materialized_matrix(self, rng):
        for seed in range(5):
            model = small_model(seed)
            x = np.random.default_rng(seed + 50).standard_normal((7, 12))
            expect = x @ materialized_matrix(model)
            assert np.max(np.abs(forward(model, x) - expect)) <= 1e-10

    def test_scaling_one_core_scales_output(self, rng):
        model = small_model(3)
        x = rng.standard_normal(12)
        y1 = forward(model, x)
        model.trf.cores[2] *= 2.5
        assert np.max(np.abs(forward(model, x) - 2.5 * y1)) <= 1e-10

    def test_linearity(self, rng):
        model = small_model(4)
        x = rng.standard_normal(12)
        z = rng.standard_normal(12)
        lhs = forward(model, 2.0 * x + 3.0 * z)
        rhs = 2.0 * forward(model, x) + 3.0 * forward(model, z)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10

    def test_vector_and_batch_agree(self, rng):
        model = small_model(5)
        x = rng.standard_normal((4, 12))
        batch = forward(model, x)
        rows = np.stack([forward(model, row) for row in x])
        assert np.max(np.abs(batch - rows)) <= 1e-12
        assert forward(model, x[0]).shape == (10,)

    def test_wrong_length_rejected(self, rng):
        model = small_model(6)
        with pytest.raises(ShapeError):
            forward(model, rng.standard_normal(13))

    def test_stack_composes_layers(self, rng):
        a = make_model((3, 4), (2, 5), (2, 2, 2, 2), 1)
        b = make_model((2, 5), (3, 4), (2, 2, 2, 2), 2)
        stack = TRStack([a, b])
        x = rng.standard_normal((3, 12))
        expect = forward(b, forward(a, x))
        assert np.max(np.abs(forward(stack, x) - expect)) <= 1e-12

    def test_stack_size_chaining_validated(self):
        a = make_model((3, 4), (2, 5), (2,) * 4, 1)
        with pytest.raises(ShapeError):
            TRStack([a, make_model((3, 4), (2, 5), (2,) * 4, 2)])


class TestMseLoss:
    def test_equal_is_zero(self, rng):
        p = rng.standard_normal((3, 4))
        assert mse_loss(p, p) == 0.0

    def test_ones_vs_zeros(self):
        assert mse_loss(np.zeros((1, 4)), np.ones((1, 4))) == 1.0

    def test_matches_loop_oracle(self, rng):
        p = rng.standard_normal((3, 5))
        t = rng.standard_normal((3, 5))
        total = 0.0
        for i in range(3):
            for j in range(5):
                total += (p[i, j] - t[i, j]) ** 2
        assert abs(mse_loss(p, t) - total / 15) <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros((2, 3)), np.zeros((3, 2)))


class TestCoreGradients:
    def test_zero_residual_zero_gradients(self, rng):
        model = small_model(7)
        x = rng.standard_normal((6, 12))
        y = forward(model, x)
        for g in core_gradients(model, x, y):
            assert np.max(np.abs(g)) == 0.0

    def test_finite_difference_check(self):
        rng = np.random.default_rng(11)
        model = small_model(11)
        x = rng.standard_normal((5, 12))
        y = rng.standard_normal((5, 10))
        analytic = core_gradients(model, x, y)
        numeric = fd_gradients(model, x, y)
        assert fd_agreement(analytic, numeric) <= 1e-5

    def test_gradient_of_core_ignores_its_own_scale(self):
        # grad wrt core i is a contraction of the residual with the OTHER
        # cores; rescale core i while pinning the residual and it must not move
        rng = np.random.default_rng(12)
        model = small_model(12)
        x = rng.standard_normal((5, 12))
        y = rng.standard_normal((5, 10))
        g1 = core_gradients(model, x, y)
        pred1 = forward(model, x)
        model.trf.cores[1] *= 3.0
        y2 = forward(model, x) - (pred1 - y)
        g2 = core_gradients(model, x, y2)
        assert np.max(np.abs(g2[1] - g1[1])) <= 1e-10
        numeric = fd_gradients(model, x, y2)
        assert fd_agreement(core_gradients(model, x, y2), numeric) <= 1e-5

    def test_two_core_ring(self):
        # d=2 takes a dedicated gradient path with no pair merging
        rng = np.random.default_rng(13)
        model = make_model((4,), (5,), (2, 3), 13)
        x = rng.standard_normal((4, model.input_size))
        y = rng.standard_normal((4, model.output_size))
        assert fd_agreement(
            core_gradients(model, x, y), fd_gradients(model, x, y)
        ) <= 1e-5

    def test_three_core_hole_paths(self):
        rng = np.random.default_rng(14)
        model = make_model((3, 4), (5,), (2, 3, 2), 14)
        x = rng.standard_normal((4, 12))
        y = rng.standard_normal((4, 5))
        assert fd_agreement(
            core_gradients(model, x, y), fd_gradients(model, x, y)
        ) <= 1e-5

    def test_stack_gradients(self):
        rng = np.random.default_rng(15)
        a = make_model((3, 4), (2, 5), (2,) * 4, 15)
        b = make_model((2, 5), (4, 3), (2,) * 4, 16)
        stack = TRStack([a, b])
        x = rng.standard_normal((4, 12))
        y = rng.standard_normal((4, 12))
        analytic = core_gradients(stack, x, y)
        assert len(analytic) == 8
        h = 1e-5
        worst = 0.0
        for c, (layer, core_i) in enumerate(
            [(l, i) for l in stack.layers for i in range(4)]
        ):
            flat = layer.trf.cores[core_i].reshape(-1)
            g = np.zeros(flat.size)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = mse_loss(forward(stack, x), y)
                flat[i] = keep - h
                down = mse_loss(forward(stack, x), y)
                flat[i] = keep
                g[i] = (up - down) / (2 * h)
            scale = max(float(np.max(np.abs(g))), 1e-12)
            worst = max(
                worst, float(np.max(np.abs(analytic[c].reshape(-1) - g))) / scale
            )
        assert worst <= 1e-5

    def test_batch_size_mismatch(self, rng):
        model = small_model(17)
        with pytest.raises(ShapeError):
            core_gradients(
                model, rng.standard_normal((3, 12)), rng.standard_normal((4, 10))
            )


class TestTrain:
    def test_zero_epochs_noop(self, dataset):
        model = make_model((12, 12), (12, 12), (3,) * 4, 1)
        before = [c.copy() for c in model.trf.cores]
        _, report = train(model, dataset, TrainConfig(epochs=0))
        assert report.epochs_run == 0
        assert report.per_epoch_train_loss == []
        assert all(np.array_equal(a, b) for a, b in zip(model.trf.cores, before))

    def test_seed_reproducibility(self, dataset):
        losses = []
        for _ in range(2):
            model = make_model((12, 12), (12, 12), (3,) * 4, 2)
            _, report = train(model, dataset, TrainConfig(epochs=2, seed=99))
            losses.append(report.per_epoch_train_loss)
        assert losses[0] == losses[1]

    def test_zero_learning_rate_freezes_parameters(self, dataset):
        model = make_model((12, 12), (12, 12), (3,) * 4, 3)
        before = [c.copy() for c in model.trf.cores]
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        # the invariant: a vanishing step leaves cores bit-identical
        train(model, dataset, TrainConfig(learning_rate=5e-324, epochs=1))
        assert all(np.array_equal(a, b) for a, b in zip(model.trf.cores, before))

    def test_report_accounting(self, dataset):
        model = make_model((12, 12), (12, 12), (3,) * 4, 4)
        _, report = train(model, dataset, TrainConfig(epochs=3))
        assert report.epochs_run == 3
        assert len(report.per_epoch_train_loss) == 3
        assert report.wall_clock_s > 0
        assert report.final_test_mse == pytest.approx(evaluate(model, dataset))

    def test_divergence_names_epoch(self, dataset):
        model = make_model((12, 12), (12, 12), (3,) * 4, 5)
        model.trf.cores[0][0, 0, 0] = np.nan
        with pytest.raises(DivergenceError, match="epoch 1"):
            train(model, dataset, TrainConfig(epochs=2))

    def test_learning_makes_progress(self, dataset):
        # first-epoch running loss beats the untrained loss at 20 random
        # rank vectors across the full candidate range
        rng = np.random.default_rng(20)
        for _ in range(20):
            ranks = tuple(int(v) for v in rng.integers(3, 16, 4))
            model = make_model((12, 12), (12, 12), ranks, int(rng.integers(1 << 30)))
            initial = mse_loss(forward(model, dataset.train_x), dataset.train_y)
            _, report = train(model, dataset, TrainConfig(epochs=1))
            assert report.per_epoch_train_loss[0] < initial


class TestEvaluate:
    def test_zero_model_mse_is_target_power(self, dataset):
        model = make_model((12, 12), (12, 12), (2,) * 4, 6)
        for c in model.trf.cores:
            c[:] = 0.0
        expect = float(np.mean(dataset.test_y**2))
        assert evaluate(model, dataset) == pytest.approx(expect, rel=1e-12)

    def test_purity(self, dataset):
        model = make_model((12, 12), (12, 12), (3,) * 4, 7)
        assert evaluate(model, dataset) == evaluate(model, dataset)

    def test_matches_row_loop(self, dataset):
        model = make_model((12, 12), (12, 12), (2,) * 4, 8)
        preds = np.stack([forward(model, x) for x in dataset.test_x[:50]])
        sub = mse_loss(preds, dataset.test_y[:50])
        full_pred = forward(model, dataset.test_x[:50])
        assert abs(mse_loss(full_pred, dataset.test_y[:50]) - sub) <= 1e-12
