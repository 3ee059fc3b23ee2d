import dataclasses
import math

import numpy as np
import pytest

from nhotquant.codebook import gen_codebook
from nhotquant.codec import QuantParams
from nhotquant.qat import (
    Network,
    TrainConfig,
    TrainingDivergedError,
    cosine_lr,
    make_toy_dataset,
    quantized_weights,
    ste_backward,
    train_single_stage,
    train_two_stage,
)


def small_config(**kw):
    base = dict(epochs_warmup=5, epochs_total=10, batch_size=32, lr_initial=0.01,
                cosine_period=5.0, seed=3, weight_bits=6, weight_terms=2,
                weight_mode="nhot", act_bits=8)
    base.update(kw)
    return TrainConfig(**base)


def fresh_net(seed=3, sizes=(2, 16, 16, 2)):
    return Network.init(sizes, np.random.default_rng(seed))


class TestCosineLr:
    def test_anchors(self):
        assert cosine_lr(0, 0.01, 20) == 0.02
        assert cosine_lr(20, 0.01, 20) == pytest.approx(0.0, abs=1e-17)
        assert cosine_lr(10, 0.01, 20) == pytest.approx(0.01, rel=1e-15)

    def test_matches_formula_at_random_epochs(self):
        rng = np.random.default_rng(0)
        for epoch in rng.uniform(0, 100, size=100):
            expected = 0.005 * (1 + math.cos(epoch * math.pi / 37.0))
            assert cosine_lr(epoch, 0.005, 37.0) == pytest.approx(expected, rel=1e-12)

    def test_bad_period(self):
        with pytest.raises(ValueError):
            cosine_lr(1, 0.01, 0)


class TestSteBackward:
    def test_pass_through_inside(self):
        p = QuantParams(-1.0, 1.0, 8)
        g = np.array([1.0, -2.0, 3.0])
        x = np.array([0.0, 0.5, -0.9])
        assert np.array_equal(ste_backward(g, x, p), g)

    def test_zero_outside(self):
        p = QuantParams(-1.0, 1.0, 8)
        g = np.ones(3)
        x = np.array([1.5, -2.0, 100.0])
        assert np.array_equal(ste_backward(g, x, p), np.zeros(3))

    def test_matches_clamp_finite_differences(self):
        """Mask equals the derivative of the clamp surrogate, checked by
        central differences away from the kink."""
        p = QuantParams(-1.0, 1.0, 8)
        rng = np.random.default_rng(8)
        x = rng.uniform(-2, 2, size=200)
        x = x[np.abs(np.abs(x) - 1.0) > 1e-3]  # keep clear of the kinks
        eps = 1e-6
        fd = (np.clip(x + eps, -1, 1) - np.clip(x - eps, -1, 1)) / (2 * eps)
        got = ste_backward(np.ones_like(x), x, p)
        assert np.allclose(got, fd, rtol=1e-4, atol=1e-4)


class TestToyDataset:
    def test_deterministic(self):
        a = make_toy_dataset(5, 100)
        b = make_toy_dataset(5, 100)
        assert np.array_equal(a.x_train, b.x_train)
        assert np.array_equal(a.y_test, b.y_test)

    def test_split_sizes(self):
        d = make_toy_dataset(0, 100)
        assert d.x_train.shape == (80, 2)
        assert d.x_test.shape == (20, 2)

    def test_minimum_size(self):
        d = make_toy_dataset(0, 4)
        assert d.x_train.shape[0] + d.x_test.shape[0] == 4
        with pytest.raises(ValueError):
            make_toy_dataset(0, 3)

    def test_classes_balanced(self):
        d = make_toy_dataset(1, 200)
        all_y = np.concatenate([d.y_train, d.y_test])
        assert np.sum(all_y == 0) == np.sum(all_y == 1) == 100


class TestTraining:
    def test_deterministic_logs(self):
        data = make_toy_dataset(3, 200)
        _, log1 = train_two_stage(fresh_net(), data, small_config())
        _, log2 = train_two_stage(fresh_net(), data, small_config())
        assert log1 == log2

    def test_stage_schedule(self):
        data = make_toy_dataset(3, 200)
        _, log = train_two_stage(fresh_net(), data, small_config())
        assert [r["stage"] for r in log] == [1] * 5 + [2] * 5
        # cosine restarts at the stage boundary by default
        assert log[0]["lr"] == log[5]["lr"] == 0.02

    def test_continued_cosine_option(self):
        data = make_toy_dataset(3, 200)
        cfg = small_config(restart_cosine=False, cosine_period=10.0)
        _, log = train_two_stage(fresh_net(), data, cfg)
        expected = [cosine_lr(e, cfg.lr_initial, 10.0) for e in range(10)]
        assert [r["lr"] for r in log] == expected

    def test_warmup_equals_total_keeps_weights_full_precision(self):
        data = make_toy_dataset(3, 200)
        cfg_all_warmup = small_config(epochs_warmup=10, epochs_total=10)
        cfg_no_wquant = small_config(epochs_warmup=10, epochs_total=10,
                                     weight_mode=None, weight_bits=None)
        net_a, log_a = train_two_stage(fresh_net(), data, cfg_all_warmup)
        net_b, log_b = train_two_stage(fresh_net(), data, cfg_no_wquant)
        assert log_a == log_b
        for wa, wb in zip(net_a.weights, net_b.weights):
            assert np.array_equal(wa, wb)

    def test_single_stage_is_zero_warmup(self):
        data = make_toy_dataset(3, 200)
        net_a, log_a = train_single_stage(fresh_net(), data, small_config())
        net_b, log_b = train_two_stage(fresh_net(), data, small_config(epochs_warmup=0))
        assert log_a == log_b
        for wa, wb in zip(net_a.weights, net_b.weights):
            assert np.array_equal(wa, wb)

    def test_stage2_weights_are_codebook_members(self):
        data = make_toy_dataset(3, 200)
        cfg = small_config()
        net, _ = train_two_stage(fresh_net(), data, cfg, check_invariants=True)
        book = gen_codebook(cfg.weight_bits, cfg.weight_terms, cfg.weight_mode)
        mags = np.asarray(book.magnitudes, dtype=np.float64)
        for w, wq in zip(net.weights, quantized_weights(net, cfg)):
            peak = np.max(np.abs(w))
            scale = 2 * peak / (1 << cfg.weight_bits)
            levels = np.unique(np.concatenate([-mags, mags]) * scale)
            assert np.isin(wq.ravel(), levels).all()

    def test_disabled_quantization_matches_plain_sgd(self):
        """With both quantizers off the loop must be bit-identical to an
        independently written plain-SGD reference."""
        data = make_toy_dataset(11, 200)
        cfg = small_config(epochs_warmup=0, epochs_total=6, cosine_period=6.0,
                          weight_mode=None, weight_bits=None, act_bits=None, seed=11)
        net, log = train_two_stage(fresh_net(11), data, cfg)

        ref = fresh_net(11)
        rng = np.random.default_rng(11)
        ref_losses = []
        for epoch in range(1, 7):
            lr = cosine_lr(epoch - 1, cfg.lr_initial, cfg.cosine_period)
            order = rng.permutation(data.x_train.shape[0])
            losses = []
            for start in range(0, order.size, cfg.batch_size):
                idx = order[start: start + cfg.batch_size]
                x, y = data.x_train[idx], data.y_train[idx]
                acts = [x]
                zs = []
                a = x
                for l in range(3):
                    z = a @ ref.weights[l] + ref.biases[l]
                    zs.append(z)
                    if l < 2:
                        a = np.maximum(z, 0.0)
                        acts.append(a)
                n = x.shape[0]
                shifted = z - z.max(axis=1, keepdims=True)
                probs = np.exp(shifted)
                probs /= probs.sum(axis=1, keepdims=True)
                losses.append(float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300))))
                delta = probs.copy()
                delta[np.arange(n), y] -= 1.0
                delta /= n
                gws, gbs = [None] * 3, [None] * 3
                for l in range(2, -1, -1):
                    gws[l] = acts[l].T @ delta
                    gbs[l] = delta.sum(axis=0)
                    if l > 0:
                        delta = delta @ ref.weights[l].T
                        delta = delta * (zs[l - 1] > 0.0)
                for l in range(3):
                    ref.weights[l] -= lr * (gws[l] + cfg.weight_decay * ref.weights[l])
                    ref.biases[l] -= lr * gbs[l]
            ref_losses.append(float(np.mean(losses)))
        assert [r["train_loss"] for r in log] == ref_losses
        for w_got, w_ref in zip(net.weights, ref.weights):
            assert np.array_equal(w_got, w_ref)

    def test_divergence_reports_epoch(self):
        data = make_toy_dataset(3, 100)
        cfg = small_config(lr_initial=1e12, epochs_warmup=0, epochs_total=4,
                           weight_mode=None, weight_bits=None, act_bits=None)
        with pytest.raises(TrainingDivergedError) as exc:
            with np.errstate(all="ignore"):
                train_two_stage(fresh_net(), data, cfg)
        assert 1 <= exc.value.epoch <= 4

    def test_config_json_round_trip(self):
        cfg = small_config()
        assert TrainConfig.from_json(cfg.to_json()) == cfg

    def test_config_validation(self):
        with pytest.raises(ValueError):
            small_config(epochs_warmup=20, epochs_total=10)
        with pytest.raises(ValueError):
            small_config(lr_initial=-1.0)
