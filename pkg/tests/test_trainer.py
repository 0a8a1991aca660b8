"""Labels, manual backprop vs finite differences, optimizer and harness."""

import math

import numpy as np
import pytest

from u1mem.errors import DivergenceError
from u1mem.trainer import (
    Adam,
    LabelConfig,
    ToyNet,
    TrainConfig,
    augment_flip_crop,
    backward,
    combined_loss,
    cosine_lr,
    forward,
    gen_labels,
    label_config_ablation,
    label_matrix,
    load_labels,
    loss_and_grads,
    make_blobs,
    make_flip_crop_augmenter,
    make_grid_dataset,
    mean_angular_error_deg,
    save_labels,
    train,
)

from oracles import forward_reference, numerical_gradient


class TestLabels:
    def test_unit_circle_on_circle(self):
        labels = gen_labels(LabelConfig("unit_circle", seed=1, n_classes=64))
        for l in labels:
            assert abs(l.x * l.x + l.y * l.y - 1.0) <= 1e-9

    def test_discrete_four_corners_each_once(self):
        labels = gen_labels(LabelConfig("discrete", seed=3, n_classes=4))
        corners = {(l.x, l.y) for l in labels}
        assert corners == {(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)}

    def test_centered_all_origin(self):
        labels = gen_labels(LabelConfig("centered", seed=0, n_classes=5))
        assert all((l.x, l.y) == (0.0, 0.0) for l in labels)
        assert all(l.theta is None for l in labels)

    def test_uniform_in_square(self):
        labels = gen_labels(LabelConfig("uniform", seed=2, n_classes=100))
        assert all(-1.0 <= l.x <= 1.0 and -1.0 <= l.y <= 1.0 for l in labels)

    def test_deterministic(self):
        a = gen_labels(LabelConfig("unit_circle", seed=9, n_classes=6))
        b = gen_labels(LabelConfig("unit_circle", seed=9, n_classes=6))
        assert a == b

    def test_json_round_trip(self, tmp_path):
        config = LabelConfig("unit_circle", seed=5, n_classes=7)
        labels = gen_labels(config)
        path = tmp_path / "labels.json"
        save_labels(path, labels, config)
        loaded, loaded_config = load_labels(path)
        assert loaded == labels
        assert loaded_config == config


class TestForward:
    def test_zero_net_zero_outputs(self):
        net = ToyNet(4, (8,), 3, seed=0)
        for name in net.params:
            net.params[name][:] = 0.0
        logits, u1, _ = forward(net, np.ones((2, 4)))
        np.testing.assert_array_equal(logits, np.zeros((2, 3)))
        np.testing.assert_array_equal(u1, np.zeros((2, 2)))

    def test_identity_layer_passthrough(self):
        net = ToyNet(3, (3,), 3, seed=0)
        net.params["Wh0"] = np.eye(3)
        net.params["bh0"][:] = 0.0
        net.params["Wc"] = np.eye(3)
        net.params["bc"][:] = 0.0
        x = np.array([[0.5, 1.0, 2.0]])  # positive input passes ReLU untouched
        logits, _, _ = forward(net, x)
        np.testing.assert_array_equal(logits, x)

    def test_dimension_mismatch(self):
        net = ToyNet(4, (8,), 3, seed=0)
        with pytest.raises(ValueError):
            forward(net, np.ones((2, 5)))

    def test_matches_reference_arithmetic(self):
        rng = np.random.default_rng(1)
        net = ToyNet(6, (10, 7), 4, u1_hidden=(5,), seed=2)
        x = rng.standard_normal((8, 6))
        logits, u1, _ = forward(net, x)
        ref_logits, ref_u1 = forward_reference(net.params, 2, 1, x)
        np.testing.assert_allclose(logits, ref_logits, atol=1e-12)
        np.testing.assert_allclose(u1, ref_u1, atol=1e-12)


class TestLoss:
    def test_exact_label_zeroes_aux_term(self):
        labels_xy = np.array([[1.0, 0.0], [0.0, 1.0]])
        logits = np.array([[2.0, 1.0]])
        u1 = np.array([[1.0, 0.0]])
        _, _, aux = combined_loss(logits, u1, [0], labels_xy, 1.0)
        assert aux == 0.0

    def test_uniform_logits_cross_entropy(self):
        n = 5
        logits = np.zeros((3, n))
        labels_xy = np.zeros((n, 2))
        _, ce, _ = combined_loss(logits, np.zeros((3, 2)), [0, 1, 2],
                                 labels_xy, 1.0)
        np.testing.assert_allclose(ce, math.log(n), rtol=1e-12)

    def test_unit_offset_aux_term(self):
        labels_xy = np.array([[1.0, 0.0]])
        total, ce, aux = combined_loss(np.zeros((1, 1)), np.zeros((1, 2)),
                                       [0], labels_xy, 1.0)
        assert aux == 1.0
        np.testing.assert_allclose(total, ce + 1.0, rtol=1e-12)

    def test_unknown_class_rejected(self):
        with pytest.raises(ValueError):
            combined_loss(np.zeros((1, 2)), np.zeros((1, 2)), [5],
                          np.zeros((2, 2)), 1.0)


class TestBackward:
    def test_aux_head_gradient_analytic(self):
        net = ToyNet(4, (6,), 3, seed=3)
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 4))
        labels_xy = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        y = np.array([0, 1, 2, 0, 1])
        lam = 0.7
        logits, u1, cache = forward(net, x)
        du1 = 2.0 * lam * (u1 - labels_xy[y]) / len(y)
        grads = backward(net, cache, np.zeros_like(logits), du1)
        h = cache["h"]
        np.testing.assert_allclose(grads["Wu0"], h.T @ du1, atol=1e-12)
        np.testing.assert_allclose(grads["bu0"], du1.sum(axis=0), atol=1e-12)

    def test_zero_upstream_zero_grads(self):
        net = ToyNet(4, (6,), 3, seed=5)
        x = np.random.default_rng(6).standard_normal((2, 4))
        logits, u1, cache = forward(net, x)
        grads = backward(net, cache, np.zeros_like(logits), np.zeros_like(u1))
        for name, g in grads.items():
            np.testing.assert_array_equal(g, np.zeros_like(g))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        net = ToyNet(5, (8, 6), 4, u1_hidden=(4,), seed=seed)
        labels_xy = label_matrix(gen_labels(
            LabelConfig("unit_circle", seed=seed, n_classes=4)))
        # keep preactivations away from the ReLU kink so the numerical
        # derivative is clean at h=1e-4
        for attempt in range(20):
            x = rng.standard_normal((6, 5))
            y = rng.integers(0, 4, 6)
            _, _, cache = forward(net, x)
            margin = min(float(np.abs(z).min()) for z in
                         cache["trunk_z"] + cache["u1_z"]) if cache["u1_z"] \
                else float(min(np.abs(z).min() for z in cache["trunk_z"]))
            if margin > 1e-3:
                break
        _, _, _, grads = loss_and_grads(net, x, y, labels_xy, lam=1.0)

        def loss_fn():
            logits, u1, _ = forward(net, x)
            total, _, _ = combined_loss(logits, u1, y, labels_xy, 1.0)
            return total

        worst = 0.0
        for name in net.param_order:
            num = numerical_gradient(loss_fn, net.params[name], h=1e-4)
            denom = np.maximum(np.maximum(np.abs(num), np.abs(grads[name])), 1e-8)
            rel = np.abs(num - grads[name]) / denom
            worst = max(worst, float(rel.max()))
        assert worst <= 1e-4


class TestSchedule:
    def test_endpoints_exact(self):
        assert cosine_lr(0, 100, 0.01, 0.001) == 0.01
        assert cosine_lr(100, 100, 0.01, 0.001) == 0.001
        assert cosine_lr(0, 50, 0.1) == 0.1
        assert cosine_lr(50, 50, 0.1) == 0.0

    def test_monotone_nonincreasing(self):
        values = [cosine_lr(t, 80, 1e-3) for t in range(81)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestTraining:
    def _setup(self, seed=0):
        x, y = make_blobs(n_classes=4, dim=8, n_per_class=20, seed=seed)
        labels = gen_labels(LabelConfig("unit_circle", seed=seed, n_classes=4))
        return x, y, labels

    def test_lambda_zero_bit_identical_to_onehot(self):
        x, y, labels = self._setup(1)
        net_a = ToyNet(8, (16,), 4, seed=7)
        net_b = ToyNet(8, (16,), 4, seed=7)
        cfg_a = TrainConfig(epochs=5, seed=3, lam=0.0, loss_mode="combined")
        cfg_b = TrainConfig(epochs=5, seed=3, loss_mode="onehot")
        train(net_a, x, y, labels, cfg_a)
        train(net_b, x, y, labels, cfg_b)
        for name in net_a.param_order:
            np.testing.assert_array_equal(net_a.params[name],
                                          net_b.params[name])

    def test_fixed_seed_reproducible(self):
        x, y, labels = self._setup(2)
        results = []
        for _ in range(2):
            net = ToyNet(8, (16,), 4, seed=11)
            train(net, x, y, labels, TrainConfig(epochs=4, seed=5))
            results.append(net.checksum())
        assert results[0] == results[1]

    def test_blobs_reach_high_accuracy(self):
        x, y, labels = self._setup(3)
        net = ToyNet(8, (16,), 4, seed=0)
        result = train(net, x, y, labels,
                       TrainConfig(epochs=60, lr=1e-2, seed=0))
        assert result.metrics[-1]["accuracy"] >= 0.95

    def test_divergence_detected(self):
        x, y, labels = self._setup(4)
        net = ToyNet(8, (16,), 4, seed=0)
        net.params["Wh0"][:] = 1e300
        with np.errstate(all="ignore"), pytest.raises(DivergenceError):
            train(net, x, y, labels, TrainConfig(epochs=1, seed=0))

    def test_metrics_schema(self):
        x, y, labels = self._setup(5)
        net = ToyNet(8, (8,), 4, seed=1)
        result = train(net, x, y, labels, TrainConfig(epochs=3, seed=1))
        assert len(result.metrics) == 3
        row = result.metrics[0]
        assert set(row) == {"epoch", "lr", "loss", "ce", "u1", "accuracy",
                            "angular_error_deg"}
        assert row["lr"] == 1e-3  # cosine schedule starts at the base rate

    def test_angular_error_nan_for_centered(self):
        labels = gen_labels(LabelConfig("centered", seed=0, n_classes=3))
        u1 = np.zeros((4, 2))
        assert math.isnan(mean_angular_error_deg(u1, [0, 1, 2, 0], labels))

    def test_adam_zero_grads_leave_params(self):
        net = ToyNet(4, (4,), 2, seed=0)
        before = {k: v.copy() for k, v in net.params.items()}
        opt = Adam(net)
        zero = {k: np.zeros_like(v) for k, v in net.params.items()}
        opt.step(net, zero, lr=0.1)
        for name in net.param_order:
            np.testing.assert_array_equal(net.params[name], before[name])


class TestAugmentation:
    def test_shapes_preserved(self):
        rng = np.random.default_rng(0)
        images = rng.standard_normal((6, 16, 16))
        out = augment_flip_crop(images, np.random.default_rng(1))
        assert out.shape == images.shape

    def test_flattened_adapter(self):
        images, y = make_grid_dataset(n_classes=2, size=16, n_per_class=4, seed=2)
        flat = images.reshape(len(images), -1)
        augment = make_flip_crop_augmenter(16, 16)
        out = augment(flat[:3], np.random.default_rng(3))
        assert out.shape == (3, 256)

    def test_grid_training_with_augmentation_runs(self):
        images, y = make_grid_dataset(n_classes=3, size=16, n_per_class=10, seed=4)
        x = images.reshape(len(images), -1)
        labels = gen_labels(LabelConfig("unit_circle", seed=4, n_classes=3))
        net = ToyNet(256, (32,), 3, seed=4)
        result = train(net, x, y, labels, TrainConfig(epochs=3, seed=4),
                       augment_fn=make_flip_crop_augmenter(16, 16))
        assert len(result.metrics) == 3


class TestAblation:
    def test_controlled_initialization_and_schema(self):
        result = label_config_ablation(
            ["centered", "unit_circle"], seeds=[0, 1],
            n_classes=3, dim=6, n_train_per_class=12, n_test_per_class=6,
            hidden=(8,), train_config=TrainConfig(epochs=3))
        assert {row["kind"] for row in result.table} == {"centered",
                                                         "unit_circle"}
        for row in result.table:
            assert row["n_seeds"] == 2
            assert 0.0 <= row["mean"] <= 1.0
            assert row["std"] >= 0.0
        by_seed = {}
        for run in result.runs:
            by_seed.setdefault(run["seed"], set()).add(run["init_checksum"])
        for seed, checksums in by_seed.items():
            assert len(checksums) == 1  # same initial weights across kinds

    def test_requires_two_seeds(self):
        with pytest.raises(ValueError):
            label_config_ablation(["centered"], seeds=[0])
