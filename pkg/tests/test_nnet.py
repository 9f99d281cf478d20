import math

import numpy as np
import pytest

from hipscreen import phantom
from hipscreen.errors import ConfigError, EmptySplit, ShapeError
from hipscreen.metrics import overlap_metrics
from hipscreen.nnet import checkpoint as ckpt_io
from hipscreen.nnet import layers
from hipscreen.nnet.optim import Adam, adam_step
from hipscreen.nnet.train import TrainConfig, new_checkpoint, predict_mask, train, write_log
from hipscreen.nnet.unet import UNetConfig, init_params, unet_forward
from oracles import REDUCED, gradient_check


def conv_reference(x, k, b):
    """Direct nested-loop cross-correlation with zero padding 1."""
    n, c, h, w = x.shape
    f = k.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, f, h, w))
    for i in range(n):
        for o in range(f):
            for y in range(h):
                for xx in range(w):
                    out[i, o, y, xx] = np.sum(xp[i, :, y:y + 3, xx:xx + 3] * k[o]) + b[o]
    return out


class TestConv:
    def test_delta_kernel(self):
        x = np.random.default_rng(0).random((2, 3, 5, 6))
        k = np.zeros((1, 3, 3, 3))
        k[0, :, 1, 1] = 1
        assert np.allclose(layers.conv2d(x, k, np.zeros(1))[:, 0], x.sum(axis=1))

    def test_ones_kernel_border(self):
        v = 0.7
        x = np.full((1, 1, 5, 5), v)
        out = layers.conv2d(x, np.ones((1, 1, 3, 3)), np.zeros(1))[0, 0]
        assert out[2, 2] == pytest.approx(9 * v)
        assert out[0, 0] == pytest.approx(4 * v)
        assert out[0, 2] == pytest.approx(6 * v)

    def test_bias_only(self):
        out = layers.conv2d(np.random.default_rng(1).random((2, 2, 4, 4)), np.zeros((3, 2, 3, 3)),
                            np.array([1.0, -2.0, 0.5]))
        assert np.array_equal(out[:, 1], np.full((2, 4, 4), -2.0))

    def test_matches_loops(self):
        rng = np.random.default_rng(2)
        x, k, b = rng.random((2, 3, 6, 5)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
        assert np.allclose(layers.conv2d(x, k, b), conv_reference(x, k, b))

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            layers.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


class TestBatchNorm:
    def test_train_normalises(self):
        x = np.random.default_rng(0).normal(3, 5, (4, 3, 8, 8))
        rm, rv = np.zeros(3), np.ones(3)
        out = layers.batchnorm(x, np.ones(3), np.zeros(3), rm, rv, "train")
        assert np.all(np.abs(out.mean(axis=(0, 2, 3))) < 1e-5)
        assert np.all(np.abs(out.var(axis=(0, 2, 3)) - 1) < 1e-3)
        assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))

    def test_affine(self):
        x = np.random.default_rng(1).normal(size=(4, 2, 6, 6))
        out = layers.batchnorm(x, np.full(2, 2.0), np.full(2, 3.0), np.zeros(2), np.ones(2), "train")
        assert np.allclose(out.mean(axis=(0, 2, 3)), 3)
        assert np.allclose(out.std(axis=(0, 2, 3)), 2, atol=1e-4)

    def test_infer_identity(self):
        x = np.random.default_rng(2).normal(size=(2, 2, 3, 3))
        out = layers.batchnorm(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), "infer")
        assert np.allclose(out, x, atol=1e-5)


class TestPoolUpsample:
    def test_constant(self):
        out, _ = layers.maxpool2(np.full((1, 1, 4, 4), 2.5))
        assert np.all(out == 2.5)

    def test_argmax(self):
        out, arg = layers.maxpool2(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert out[0, 0, 0, 0] == 4 and divmod(int(arg[0, 0, 0, 0]), 2) == (1, 1)

    def test_odd(self):
        with pytest.raises(ShapeError):
            layers.maxpool2(np.zeros((1, 1, 3, 4)))

    def test_upsample(self):
        assert np.array_equal(layers.upsample2(np.full((1, 1, 1, 1), 0.3)), np.full((1, 1, 2, 2), 0.3))

    def test_pool_backward_routes_to_max(self):
        x = np.array([[[[1.0, 5.0], [3.0, 4.0]]]])
        _, arg = layers.maxpool2(x)
        d = layers.maxpool2_backward(np.ones((1, 1, 1, 1)), arg)
        assert np.array_equal(d, [[[[0, 1], [0, 0]]]])


class TestLoss:
    def test_uniform(self):
        loss, _ = layers.softmax_ce_loss(np.zeros((2, 4, 3, 3)), np.zeros((2, 3, 3), int))
        assert loss == pytest.approx(math.log(4), abs=1e-12)

    def test_hand_softmax(self):
        logits = np.array([1.0, 0, 0, 0]).reshape(1, 4, 1, 1)
        loss, _ = layers.softmax_ce_loss(logits, np.zeros((1, 1, 1), int))
        assert loss == pytest.approx(-math.log(math.e / (math.e + 3)), abs=1e-12)

    def test_margin_limit(self):
        losses = []
        for margin in (1, 5, 20, 60):
            logits = np.zeros((1, 4, 2, 2))
            logits[:, 2] = margin
            losses.append(layers.softmax_ce_loss(logits, np.full((1, 2, 2), 2))[0])
        assert losses == sorted(losses, reverse=True) and losses[-1] < 1e-20

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(0)
        _, d = layers.softmax_ce_loss(rng.normal(size=(2, 4, 5, 5)), rng.integers(0, 4, (2, 5, 5)))
        assert np.all(np.abs(d.sum(axis=1)) < 1e-9)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = {"w": np.array([1.0, -2.0])}
        m, v = {}, {}
        for t in range(1, 20):
            adam_step(p, {"w": np.zeros(2)}, m, v, t)
        assert np.array_equal(p["w"], [1.0, -2.0])

    def test_first_step(self):
        p = {"w": np.array([0.0])}
        adam_step(p, {"w": np.array([1.0])}, {}, {}, 1)
        assert p["w"][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)

    def test_constant_gradient_step_tends_to_lr(self):
        p = {"w": np.array([0.0])}
        opt = Adam()
        prev = 0.0
        for _ in range(2000):
            opt.step(p, {"w": np.array([-3.0])})
            step, prev = p["w"][0] - prev, p["w"][0]
        assert step == pytest.approx(0.001, rel=1e-6)

    def test_t_must_be_positive(self):
        with pytest.raises(ValueError):
            adam_step({}, {}, {}, {}, 0)


class TestUNet:
    def test_default_shape(self):
        cfg = UNetConfig()
        params, state = init_params(cfg, np.random.default_rng(0))
        out, _ = unet_forward(cfg, params, state, np.zeros((2, 1, 128, 128)), "infer")
        assert out.shape == (2, 4, 128, 128)

    def test_reduced_shape_and_duplicates(self):
        params, state = init_params(REDUCED, np.random.default_rng(0))
        x = np.random.default_rng(1).random((1, 1, 16, 16))
        out, _ = unet_forward(REDUCED, params, state, np.concatenate([x, x]), "infer")
        assert out.shape == (2, 4, 16, 16)
        assert np.array_equal(out[0], out[1])

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            UNetConfig(input_size=128, levels=4, channels=(8, 16, 32, 64))

    def test_bad_input(self):
        params, state = init_params(REDUCED, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            unet_forward(REDUCED, params, state, np.zeros((1, 1, 8, 8)))

    @pytest.mark.parametrize("seed", [0, 2, 4])
    def test_gradients_match_finite_differences(self, seed):
        worst, where, n = gradient_check(seed=seed)
        assert n > 600
        assert worst < 1e-4, where


@pytest.fixture(scope="module")
def tiny_samples():
    samples, _ = phantom.generate_dataset(4, seed=11)
    # 16x16 crops around the head keep these unit tests fast.
    out = []
    for s in samples:
        ys, xs = np.nonzero(s.mask == 2)
        cy, cx = int(ys.mean()), int(xs.mean())
        y0, x0 = max(cy - 8, 0), max(cx - 8, 0)
        out.append(type(s)(s.id, s.image[y0:y0 + 16, x0:x0 + 16], s.mask[y0:y0 + 16, x0:x0 + 16],
                           s.ggt_class, s.side))
    return out


class TestTraining:
    def test_deterministic(self, tiny_samples):
        cfg = TrainConfig(epochs=2, seed=5)
        a = train(tiny_samples, tiny_samples[:2], REDUCED, cfg)
        b = train(tiny_samples, tiny_samples[:2], REDUCED, cfg)
        assert a.log[0]["train_loss"] == b.log[0]["train_loss"]
        assert ckpt_io.to_bytes(a.final) == ckpt_io.to_bytes(b.final)

    def test_zero_learning_rate(self, tiny_samples):
        cfg = TrainConfig(epochs=1, learning_rate=0.0, seed=1)
        res = train(tiny_samples, (), REDUCED, cfg)
        start = new_checkpoint(REDUCED, cfg)
        for k, v in start.params.items():
            assert np.array_equal(res.final.params[k], v)

    def test_empty_split(self):
        with pytest.raises(EmptySplit):
            train([], (), REDUCED, TrainConfig(epochs=1))

    def test_loss_decreases(self, tiny_samples):
        res = train(tiny_samples, (), REDUCED, TrainConfig(epochs=10, seed=0, batch_size=2))
        losses = [r["train_loss"] for r in res.log]
        rises = sum(1 for a, b in zip(losses, losses[1:]) if b >= a)
        assert rises <= 2 and losses[-1] < losses[0]

    def test_best_checkpoint_tracks_validation(self, tiny_samples):
        res = train(tiny_samples, tiny_samples, REDUCED, TrainConfig(epochs=4, seed=0))
        best_dsc = max(r["val_mean_dsc"] for r in res.log)
        assert res.best.best_val_dsc == best_dsc
        assert res.best.epoch == next(r["epoch"] for r in res.log if r["val_mean_dsc"] == best_dsc)

    def test_resume_is_bit_identical(self, tiny_samples, tmp_path):
        straight = train(tiny_samples, (), REDUCED, TrainConfig(epochs=2, seed=3))
        first = train(tiny_samples, (), REDUCED, TrainConfig(epochs=1, seed=3))
        ckpt_io.save(tmp_path / "c.ckpt", first.final)
        resumed = train(tiny_samples, (), REDUCED, TrainConfig(epochs=2, seed=3),
                        resume=ckpt_io.load(tmp_path / "c.ckpt"))
        assert ckpt_io.to_bytes(resumed.final) == ckpt_io.to_bytes(straight.final)

    def test_log_csv(self, tiny_samples, tmp_path):
        res = train(tiny_samples, tiny_samples, REDUCED, TrainConfig(epochs=1))
        write_log(tmp_path / "log.csv", res.log)
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_mean_dsc,seconds" and len(lines) == 2


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        ck = new_checkpoint(REDUCED, TrainConfig(seed=2))
        ckpt_io.save(tmp_path / "a.ckpt", ck)
        back = ckpt_io.load(tmp_path / "a.ckpt")
        assert back.unet_config == REDUCED
        assert ckpt_io.to_bytes(back) == ckpt_io.to_bytes(ck)
        assert (tmp_path / "a.ckpt").read_bytes()[:8] == b"HIPSCKPT"

    def test_bad_magic(self):
        with pytest.raises(ckpt_io.CheckpointError):
            ckpt_io.from_bytes(b"garbage" * 4)


class TestPredict:
    def test_shape_and_repeatability(self, tiny_samples):
        ck = new_checkpoint(REDUCED, TrainConfig())
        m1 = predict_mask(ck, tiny_samples[0].image)
        m2 = predict_mask(ck, tiny_samples[0].image)
        assert m1.shape == (16, 16) and set(np.unique(m1)) <= {0, 1, 2, 3}
        assert np.array_equal(m1, m2)

    def test_wrong_shape(self):
        with pytest.raises(ShapeError):
            predict_mask(new_checkpoint(REDUCED, TrainConfig()), np.zeros((8, 8)))

    def test_overfit_one_phantom(self, tiny_samples):
        s = tiny_samples[0]
        res = train([s], (), REDUCED, TrainConfig(epochs=150, seed=0, batch_size=1, learning_rate=0.01))
        pred = predict_mask(res.final, s.image)
        present = [c for c in (1, 2, 3) if (s.mask == c).any()]
        assert min(overlap_metrics(pred, s.mask, c).dsc for c in present) >= 0.95
