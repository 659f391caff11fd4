import math

import numpy as np
import pytest

from scaseg import (AdamW, ConfigError, DataError, DecoderConfig,
                    EncoderConfig, SegModel, Tensor, TrainConfig, UsageError,
                    cross_entropy, evaluate, gen_synthetic_dataset, miou,
                    poly_lr, train_loop)
from scaseg.data import PALETTE


class TestSyntheticData:
    def test_shapes_and_ranges(self):
        samples = gen_synthetic_dataset(5, 64, 64, 4, seed=0)
        assert len(samples) == 5
        for s in samples:
            assert s.image.shape == (3, 64, 64)
            assert s.mask.shape == (64, 64)
            assert s.image.min() >= 0.0 and s.image.max() <= 1.0
            assert s.mask.min() >= 0 and s.mask.max() < 4

    def test_deterministic(self):
        a = gen_synthetic_dataset(3, 64, 64, 4, seed=7)
        b = gen_synthetic_dataset(3, 64, 64, 4, seed=7)
        for x, y in zip(a, b):
            assert np.array_equal(x.image, y.image)
            assert np.array_equal(x.mask, y.mask)

    def test_different_seeds_differ(self):
        a = gen_synthetic_dataset(1, 64, 64, 4, seed=0)[0]
        b = gen_synthetic_dataset(1, 64, 64, 4, seed=1)[0]
        assert not np.array_equal(a.mask, b.mask)

    def test_every_class_gets_pixels(self):
        samples = gen_synthetic_dataset(100, 64, 64, 4, seed=3)
        ok = sum(1 for s in samples
                 if (np.bincount(s.mask.ravel(), minlength=4) >= 16).all())
        assert ok >= 99

    def test_image_follows_palette(self):
        s = gen_synthetic_dataset(1, 64, 64, 4, seed=5)[0]
        clean = PALETTE[s.mask].transpose(2, 0, 1)
        # noise is clipped, so deviations stay within a few sigma
        assert np.abs(s.image - clean).max() < 0.3

    def test_class_count_limits(self):
        with pytest.raises(ConfigError):
            gen_synthetic_dataset(1, 64, 64, 1, seed=0)
        with pytest.raises(ConfigError):
            gen_synthetic_dataset(1, 64, 64, 13, seed=0)
        with pytest.raises(ConfigError):
            gen_synthetic_dataset(1, 60, 64, 4, seed=0)


class TestCrossEntropy:
    def test_uniform_logits_give_log_k(self):
        for K in (2, 4, 7):
            logits = Tensor(np.zeros((2, K, 4, 4)))
            mask = np.random.default_rng(0).integers(0, K, size=(2, 4, 4))
            assert abs(cross_entropy(logits, mask).item() - math.log(K)) < 1e-12

    def test_confident_correct_prediction_is_near_zero(self):
        mask = np.random.default_rng(1).integers(0, 3, size=(1, 4, 4))
        logits = np.zeros((1, 3, 4, 4))
        np.put_along_axis(logits, mask[:, None], 50.0, axis=1)
        assert cross_entropy(Tensor(logits), mask).item() < 1e-20

    def test_matches_per_pixel_loop_oracle(self):
        g = np.random.default_rng(2)
        logits = g.normal(size=(2, 5, 3, 3))
        mask = g.integers(0, 5, size=(2, 3, 3))
        total = 0.0
        for b in range(2):
            for y in range(3):
                for x in range(3):
                    z = logits[b, :, y, x]
                    p = np.exp(z - z.max())
                    p /= p.sum()
                    total -= math.log(p[mask[b, y, x]])
        expected = total / (2 * 3 * 3)
        assert abs(cross_entropy(Tensor(logits), mask).item() - expected) < 1e-10

    def test_bad_labels_rejected(self):
        logits = Tensor(np.zeros((1, 3, 2, 2)))
        with pytest.raises(DataError):
            cross_entropy(logits, np.full((1, 2, 2), 3))
        with pytest.raises(DataError):
            cross_entropy(logits, np.full((1, 2, 2), -1))
        with pytest.raises(DataError):
            cross_entropy(logits, np.zeros((1, 4, 4), dtype=int))

    def test_gradient_matches_softmax_minus_onehot(self):
        g = np.random.default_rng(3)
        logits = Tensor(g.normal(size=(1, 3, 2, 2)), requires_grad=True)
        mask = g.integers(0, 3, size=(1, 2, 2))
        cross_entropy(logits, mask).backward()
        z = logits.data
        p = np.exp(z - z.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        onehot = np.zeros_like(z)
        np.put_along_axis(onehot, mask[:, None], 1.0, axis=1)
        assert np.allclose(logits.grad, (p - onehot) / 4, atol=1e-12)


class TestPolyLr:
    def test_endpoints_and_midpoint(self):
        cfg = TrainConfig(iterations=100, base_lr=0.1, poly_power=1.0)
        assert poly_lr(0, cfg) == 0.1
        assert abs(poly_lr(50, cfg) - 0.05) < 1e-15
        assert abs(poly_lr(99, cfg) - 0.001) < 1e-15

    def test_power_shapes_the_curve(self):
        cfg = TrainConfig(iterations=10, base_lr=1.0, poly_power=0.9)
        assert abs(poly_lr(5, cfg) - 0.5 ** 0.9) < 1e-15

    def test_out_of_range_iteration(self):
        cfg = TrainConfig(iterations=10)
        with pytest.raises(UsageError):
            poly_lr(10, cfg)
        with pytest.raises(UsageError):
            poly_lr(-1, cfg)


class TestAdamW:
    def test_zero_gradient_without_decay_leaves_param(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        opt = AdamW([("p", p)], weight_decay=0.0)
        opt.step(0.1)
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_first_step_size_is_about_lr_times_sign(self):
        p = Tensor(np.array([0.0, 0.0]), requires_grad=True)
        p.grad = np.array([3.0, -0.5])
        AdamW([("p", p)], weight_decay=0.0).step(0.01)
        # after bias correction the first update is lr * g/(|g| + eps)
        assert np.allclose(p.data, [-0.01, 0.01], atol=1e-6)

    def test_decay_alone_is_geometric(self):
        p = Tensor(np.array([4.0]), requires_grad=True)
        opt = AdamW([("p", p)], weight_decay=0.5)
        for _ in range(3):
            p.grad = np.zeros(1)
            opt.step(0.1)
        assert abs(p.data[0] - 4.0 * (1 - 0.1 * 0.5) ** 3) < 1e-12

    def test_constant_gradient_two_steps_match_hand_rollout(self):
        g = np.array([2.0])
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = AdamW([("p", p)], weight_decay=0.0)
        x = 1.0
        m = v = 0.0
        for t in (1, 2):
            p.grad = g.copy()
            opt.step(0.01)
            m = 0.9 * m + 0.1 * g[0]
            v = 0.999 * v + 0.001 * g[0] ** 2
            x -= 0.01 * (m / (1 - 0.9 ** t)) / (
                math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert abs(p.data[0] - x) < 1e-12

    def test_non_finite_gradient_raises(self):
        from scaseg import NumericalError
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([np.nan])
        with pytest.raises(NumericalError, match="p"):
            AdamW([("p", p)]).step(0.1)


class TestMiou:
    def test_perfect_prediction(self):
        mask = np.random.default_rng(0).integers(0, 4, size=(8, 8))
        ious, mean = miou(mask, mask, 4)
        assert mean == 1.0
        assert all(v == 1.0 for v in ious if v is not None)

    def test_counting_oracle_on_thirds(self):
        # class 1: intersection {cell 1}, union {cells 0,1,2} -> 1/3
        # class 0: pred {cell 2}, true {cell 0} -> no overlap -> 0
        pred = np.array([[1, 1, 0]])
        true = np.array([[0, 1, 1]])
        ious, mean = miou(pred, true, 2)
        assert ious == [0.0, pytest.approx(1 / 3)]
        assert mean == pytest.approx(1 / 6)

    def test_absent_class_is_excluded(self):
        pred = np.zeros((4, 4), dtype=int)
        true = np.zeros((4, 4), dtype=int)
        ious, mean = miou(pred, true, 3)
        assert ious == [1.0, None, None]
        assert mean == 1.0

    def test_symmetric_in_arguments(self):
        g = np.random.default_rng(4)
        a = g.integers(0, 3, size=(16, 16))
        b = g.integers(0, 3, size=(16, 16))
        assert miou(a, b, 3)[1] == miou(b, a, 3)[1]

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            miou(np.zeros((2, 2), int), np.zeros((3, 3), int), 2)


def tiny_setup(seed=0, iterations=4):
    enc = EncoderConfig(channels=(4, 8, 12, 16))
    dec = DecoderConfig(num_blocks=1, head_channels=8)
    cfg = TrainConfig(iterations=iterations, batch_size=2, seed=seed,
                      train_samples=6, val_samples=2, eval_interval=2)
    model = SegModel(enc, dec, seed=seed)
    train_set = gen_synthetic_dataset(cfg.train_samples, 64, 64, 4, cfg.seed)
    val_set = gen_synthetic_dataset(cfg.val_samples, 64, 64, 4, cfg.seed + 1)
    return model, train_set, val_set, cfg


class TestTrainLoop:
    def test_rows_and_metrics_file(self, tmp_path):
        model, tr, va, cfg = tiny_setup()
        path = tmp_path / "metrics.csv"
        rows = train_loop(model, tr, va, cfg, metrics_path=path)
        assert rows[0] == "iter,lr,loss,miou"
        assert len(rows) == cfg.iterations + 1
        # eval column filled exactly at eval_interval boundaries
        filled = [r.split(",")[3] != "" for r in rows[1:]]
        assert filled == [False, True, False, True]
        assert path.read_text().splitlines() == rows

    def test_identical_seeds_give_identical_rows(self):
        runs = []
        for _ in range(2):
            model, tr, va, cfg = tiny_setup(seed=3)
            runs.append(train_loop(model, tr, va, cfg))
        assert runs[0] == runs[1]

    def test_checkpoint_roundtrip_preserves_predictions(self, tmp_path):
        from scaseg import load_checkpoint
        model, tr, va, cfg = tiny_setup()
        ckpt = tmp_path / "model.ckpt"
        train_loop(model, tr, va, cfg, checkpoint_path=ckpt)
        model.eval()
        x = Tensor(va[0].image[None])
        expected = model(x).data

        fresh, _, _, _ = tiny_setup(seed=99)
        fresh.load_state(load_checkpoint(ckpt))
        fresh.eval()
        assert np.allclose(fresh(x).data, expected, atol=1e-12)

    def test_evaluate_restores_training_mode(self):
        model, tr, va, cfg = tiny_setup()
        model.train()
        evaluate(model, va[:1], 4)
        assert model.training
        model.eval()
        evaluate(model, va[:1], 4)
        assert not model.training
