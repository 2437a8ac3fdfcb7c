import math

import numpy as np
import pytest

from crossgrid.model import (
    EarlyStopper,
    ForecastModel,
    ModelConfig,
    ModelError,
    backward_bptt,
    evaluate_rmse,
    forward,
    init_model,
    learning_rate,
    load_checkpoint,
    mse_loss,
    predict_week,
    rmse,
    save_checkpoint,
    train,
)
from crossgrid.timeseries import NormStats, SequenceDataset

from _oracles import finite_difference_grads, max_relative_error


def tiny_config(**overrides):
    base = dict(
        input_dim=7,
        seq_len=7,
        lstm_sizes=(4,),
        fc_sizes=(3,),
        batch_norm=False,
        init_mode="fan-in",
        max_epochs=50,
        patience=5,
        batch_size=8,
        seed=11,
    )
    base.update(overrides)
    return ModelConfig(**base)


def make_dataset(n, seed=0, stats=None):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, size=(n, 7, 7))
    # targets linear in the inputs so a small net can fit them
    w = rng.uniform(-0.5, 0.5, size=7)
    y = np.clip(x @ w / 4 + 0.4, 0, 1)
    if stats is None:
        stats = NormStats({"consumption": (0.0, 1.0), "air_temp": (0.0, 1.0),
                           "solar": (0.0, 1.0), "wind": (0.0, 1.0)})
    return SequenceDataset(x, y, stats)


class TestConfig:
    def test_defaults_follow_training_recipe(self):
        cfg = ModelConfig()
        assert cfg.lstm_sizes == (256,) and cfg.fc_sizes == (128,)
        assert cfg.lr_start == 1e-3 and cfg.lr_end == 1e-5
        assert cfg.max_epochs == 1000 and cfg.patience == 20 and cfg.batch_size == 80
        assert cfg.init_std == 1.0 and cfg.batch_norm

    def test_rejects_bad_sizes(self):
        with pytest.raises(ModelError):
            ModelConfig(lstm_sizes=(0,))
        with pytest.raises(ModelError):
            ModelConfig(lr_start=1e-6, lr_end=1e-3)
        with pytest.raises(ModelError):
            ModelConfig(patience=2000)


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_model(tiny_config())
        b = init_model(tiny_config())
        assert a.params.keys() == b.params.keys()
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()

    def test_sigma_zero_gives_zero_weights(self):
        m = init_model(tiny_config(init_std=0.0, init_mode="normal"))
        for k, p in m.params.items():
            assert np.count_nonzero(p) == 0 or k.endswith("gamma")

    def test_biases_start_at_zero(self):
        m = init_model(tiny_config(batch_norm=True))
        for k, p in m.params.items():
            if ".b_" in k or k.endswith(".b") or k.endswith("beta"):
                assert np.count_nonzero(p) == 0

    def test_default_parameter_count_matches_shape_sum(self):
        cfg = ModelConfig()
        m = init_model(cfg)
        # independent shape-sum: 4 gates of (in*h + h*h + h), then FC, BN, output
        expected = 0
        d = cfg.input_dim
        for h in cfg.lstm_sizes:
            expected += 4 * (d * h + h * h + h)
            d = h
        for w in cfg.fc_sizes:
            expected += d * w + w
            if cfg.batch_norm:
                expected += 2 * w
            d = w
        expected += d * cfg.output_dim + cfg.output_dim
        assert m.parameter_count == expected
        assert expected == 303_617


class TestForward:
    def test_zero_network_zero_predictions(self):
        m = init_model(tiny_config(init_std=0.0, init_mode="normal"))
        x = np.random.default_rng(0).uniform(size=(3, 7, 7))
        preds, _ = forward(m, x)
        assert np.count_nonzero(preds) == 0

    def test_hand_traced_scalar_network(self):
        cfg = ModelConfig(input_dim=1, seq_len=2, lstm_sizes=(1,), fc_sizes=(1,),
                          batch_norm=False, max_epochs=10, patience=2, seed=0)
        m = init_model(cfg)
        m.params.update(
            {
                "lstm0.W_i": np.array([[0.5]]), "lstm0.W_f": np.array([[0.4]]),
                "lstm0.W_g": np.array([[0.3]]), "lstm0.W_o": np.array([[0.2]]),
                "lstm0.U_i": np.array([[0.1]]), "lstm0.U_f": np.array([[0.2]]),
                "lstm0.U_g": np.array([[0.3]]), "lstm0.U_o": np.array([[0.4]]),
                "lstm0.b_i": np.array([0.05]), "lstm0.b_f": np.array([0.06]),
                "lstm0.b_g": np.array([0.07]), "lstm0.b_o": np.array([0.08]),
                "fc0.W": np.array([[1.5]]), "fc0.b": np.array([0.1]),
                "out.W": np.array([[2.0]]), "out.b": np.array([-0.3]),
            }
        )
        xs = [0.7, -0.2]
        sig = lambda v: 1.0 / (1.0 + math.exp(-v))
        h = c = 0.0
        expected = []
        for x in xs:
            i = sig(0.5 * x + 0.1 * h + 0.05)
            f = sig(0.4 * x + 0.2 * h + 0.06)
            g = math.tanh(0.3 * x + 0.3 * h + 0.07)
            o = sig(0.2 * x + 0.4 * h + 0.08)
            c = f * c + i * g
            h = o * math.tanh(c)
            a = max(0.0, 1.5 * h + 0.1)
            expected.append(2.0 * a - 0.3)
        preds, _ = forward(m, np.array(xs).reshape(1, 2, 1))
        assert np.allclose(preds[0, :, 0], expected, atol=1e-12)

    def test_batch_permutation_equivariance_inference(self):
        m = init_model(tiny_config(batch_norm=True))
        rng = np.random.default_rng(5)
        x = rng.uniform(size=(6, 7, 7))
        perm = rng.permutation(6)
        a, _ = forward(m, x, training=False)
        b, _ = forward(m, x[perm], training=False)
        assert np.array_equal(a[perm], b)

    def test_training_equals_inference_without_batch_norm(self):
        m = init_model(tiny_config(batch_norm=False))
        x = np.random.default_rng(1).uniform(size=(4, 7, 7))
        a, _ = forward(m, x, training=True)
        b, _ = forward(m, x, training=False)
        assert np.array_equal(a, b)

    def test_shape_mismatch_errors(self):
        m = init_model(tiny_config())
        with pytest.raises(ModelError, match="shape"):
            forward(m, np.zeros((2, 3, 7)))


class TestRmse:
    def test_zero_when_equal(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_example(self):
        assert rmse([0.0, 3.0], [4.0, 0.0]) == pytest.approx(math.sqrt(12.5))

    def test_homogeneity(self):
        rng = np.random.default_rng(2)
        y, yh = rng.normal(size=10), rng.normal(size=10)
        assert rmse(3.5 * y, 3.5 * yh) == pytest.approx(3.5 * rmse(y, yh))

    def test_errors(self):
        with pytest.raises(ModelError):
            rmse([1.0], [1.0, 2.0])
        with pytest.raises(ModelError):
            rmse([], [])


class TestBackward:
    def test_gradients_match_finite_differences(self):
        for bn in (False, True):
            cfg = tiny_config(lstm_sizes=(3,), fc_sizes=(2,), seq_len=3, batch_norm=bn, seed=3)
            m = init_model(cfg)
            rng = np.random.default_rng(7)
            x = rng.uniform(size=(2, 3, 7))
            y = rng.uniform(size=(2, 3))
            _, cache = forward(m, x, training=True)
            analytic = backward_bptt(m, cache, y)
            numeric = finite_difference_grads(m, x, y)
            assert max_relative_error(analytic, numeric) <= 1e-4, f"bn={bn}"

    def test_zero_gradient_at_loss_minimum(self):
        m = init_model(tiny_config(init_std=0.0, init_mode="normal"))
        x = np.random.default_rng(0).uniform(size=(2, 7, 7))
        preds, cache = forward(m, x, training=True)
        grads = backward_bptt(m, cache, np.zeros((2, 7)))
        for g in grads.values():
            assert np.count_nonzero(g) == 0

    def test_duplicating_batch_leaves_gradients_unchanged(self):
        m = init_model(tiny_config(batch_norm=False))
        rng = np.random.default_rng(9)
        x = rng.uniform(size=(3, 7, 7))
        y = rng.uniform(size=(3, 7))
        _, cache1 = forward(m, x, training=True)
        g1 = backward_bptt(m, cache1, y)
        x2 = np.concatenate([x, x])
        y2 = np.concatenate([y, y])
        _, cache2 = forward(m, x2, training=True)
        g2 = backward_bptt(m, cache2, y2)
        for k in g1:
            assert np.allclose(g1[k], g2[k], atol=1e-12)

    def test_inference_cache_rejected_with_batch_norm(self):
        m = init_model(tiny_config(batch_norm=True))
        x = np.random.default_rng(0).uniform(size=(2, 7, 7))
        _, cache = forward(m, x, training=False)
        with pytest.raises(ModelError, match="training-mode"):
            backward_bptt(m, cache, np.zeros((2, 7)))


class TestLearningRate:
    def test_endpoints_exact(self):
        cfg = tiny_config(max_epochs=200)
        assert learning_rate(cfg, 0) == 1e-3
        assert learning_rate(cfg, 199) == 1e-5

    def test_strictly_decreasing(self):
        cfg = tiny_config(max_epochs=100)
        lrs = [learning_rate(cfg, e) for e in range(100)]
        assert all(b < a for a, b in zip(lrs, lrs[1:]))


class TestEarlyStopper:
    def test_plateau_from_epoch_10_stops_at_30(self):
        stopper = EarlyStopper(patience=20)
        stopped_at = None
        losses = [1.0 / (e + 1) for e in range(10)] + [0.1] * 100  # best at epoch 10 (1-based)
        for epoch, loss in enumerate(losses):
            if stopper.update(epoch, loss):
                stopped_at = epoch + 1  # 1-based epoch count
                break
        assert stopped_at == 30
        assert stopper.best_epoch == 9  # 0-based

    def test_improvement_resets_streak(self):
        stopper = EarlyStopper(patience=3)
        seq = [1.0, 0.9, 0.9, 0.8, 0.8, 0.8, 0.8]
        stops = [stopper.update(e, l) for e, l in enumerate(seq)]
        assert stops == [False, False, False, False, False, False, True]


class TestTrain:
    def test_loss_decreases_on_learnable_data(self):
        ds = make_dataset(64, seed=1)
        cfg = tiny_config(max_epochs=20, patience=10, lr_start=5e-2, lr_end=1e-2, seed=2)
        model = init_model(cfg, ds.stats)
        _, hist = train(model, ds)
        assert all(b < a for a, b in zip(hist.losses[:5], hist.losses[1:6]))
        assert hist.best_loss <= hist.losses[0]

    def test_plateau_stops_after_patience(self):
        # zero network with zero targets: gradients vanish, loss is flat
        ds = make_dataset(16, seed=3)
        flat = SequenceDataset(ds.inputs, np.zeros_like(ds.targets), ds.stats)
        cfg = tiny_config(init_std=0.0, init_mode="normal", max_epochs=50, patience=5)
        model = init_model(cfg, ds.stats)
        _, hist = train(model, flat)
        assert hist.stop_reason == "early-stop"
        assert hist.epoch_count == 1 + 5  # best at first epoch, then patience misses

    def test_max_epochs_one(self):
        ds = make_dataset(8)
        cfg = tiny_config(max_epochs=1)
        model = init_model(cfg, ds.stats)
        _, hist = train(model, ds)
        assert hist.epoch_count == 1 and hist.stop_reason == "max-epochs"

    def test_bit_reproducible(self):
        ds = make_dataset(32, seed=5)
        cfg = tiny_config(max_epochs=8, patience=3, batch_norm=True, seed=21)
        a, ha = train(init_model(cfg, ds.stats), ds)
        b, hb = train(init_model(cfg, ds.stats), ds)
        assert ha.losses == hb.losses
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()

    def test_empty_dataset_errors(self):
        ds = make_dataset(4)
        empty = SequenceDataset(ds.inputs[:0], ds.targets[:0], ds.stats)
        model = init_model(tiny_config())
        with pytest.raises(ModelError, match="empty"):
            train(model, empty)

    def test_last_partial_batch_is_kept(self):
        ds = make_dataset(10)
        cfg = tiny_config(batch_size=8, max_epochs=2, patience=1)
        model = init_model(cfg, ds.stats)
        _, hist = train(model, ds)
        assert hist.epoch_count >= 1  # smoke: 8 + 2 window split must not crash


class TestPredictWeek:
    def stats(self):
        return NormStats(
            {"consumption": (2.0, 12.0), "air_temp": (0.0, 20.0),
             "solar": (0.0, 8.0), "wind": (0.0, 6.0)}
        )

    def test_zero_model_returns_consumption_minimum(self):
        cfg = tiny_config(init_std=0.0, init_mode="normal")
        m = init_model(cfg, self.stats())
        out = predict_week(m, np.full(7, 2.0), np.zeros((7, 3)), np.zeros((7, 3)))
        assert np.allclose(out, 2.0)  # unscale(0) = channel minimum

    def test_output_length_seven(self):
        m = init_model(tiny_config(), self.stats())
        out = predict_week(m, np.full(7, 5.0), np.ones((7, 3)), np.ones((7, 3)))
        assert out.shape == (7,)

    def test_matches_training_window_without_batch_norm(self):
        stats = self.stats()
        rng = np.random.default_rng(3)
        cons = rng.uniform(2, 12, size=14)
        weather = rng.uniform(0, 6, size=(14, 3))
        m = init_model(tiny_config(batch_norm=False), stats)
        window = np.column_stack(
            [
                stats.scale("consumption", cons[:7]),
                stats.scale("air_temp", weather[:7, 0]),
                stats.scale("solar", weather[:7, 1]),
                stats.scale("wind", weather[:7, 2]),
                stats.scale("air_temp", weather[7:, 0]),
                stats.scale("solar", weather[7:, 1]),
                stats.scale("wind", weather[7:, 2]),
            ]
        )[None]
        train_preds, _ = forward(m, window, training=True)
        out = predict_week(m, cons[:7], weather[7:], weather[:7])
        assert np.allclose(out, stats.unscale("consumption", train_preds[0, :, 0]))

    def test_missing_weather_channel_errors(self):
        m = init_model(tiny_config(), self.stats())
        with pytest.raises(ModelError, match="weather"):
            predict_week(m, np.full(7, 5.0), np.ones((7, 2)), np.ones((7, 3)))

    def test_requires_stats(self):
        m = init_model(tiny_config())
        with pytest.raises(ModelError, match="statistics"):
            predict_week(m, np.full(7, 5.0), np.ones((7, 3)), np.ones((7, 3)))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        ds = make_dataset(16, seed=6)
        cfg = tiny_config(batch_norm=True, max_epochs=3, patience=2)
        model, _ = train(init_model(cfg, ds.stats), ds)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        back = load_checkpoint(path)
        assert back.config == model.config
        assert back.stats == model.stats
        for k in model.params:
            assert np.array_equal(back.params[k], model.params[k])
        for k in model.buffers:
            assert np.array_equal(back.buffers[k], model.buffers[k])

    def test_deterministic_bytes(self, tmp_path):
        ds = make_dataset(16, seed=6)
        cfg = tiny_config(max_epochs=3, patience=2)
        m1, _ = train(init_model(cfg, ds.stats), ds)
        m2, _ = train(init_model(cfg, ds.stats), ds)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(m1, p1)
        save_checkpoint(m2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ModelError, match="checkpoint"):
            load_checkpoint(path)


def test_evaluate_rmse_matches_manual():
    ds = make_dataset(12, seed=8)
    m = init_model(tiny_config(batch_norm=False), ds.stats)
    preds, _ = forward(m, ds.inputs)
    assert evaluate_rmse(m, ds) == pytest.approx(rmse(ds.targets, preds[:, :, 0]))
