import dataclasses

import numpy as np
import pytest

from fmamba.data import Scaler, load_csv, write_csv
from fmamba.model import FMambaConfig
from fmamba.tensor import Parameter, Tape, backward
from fmamba.train import (
    Adam,
    AdamState,
    Checkpoint,
    EarlyStopping,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    evaluate,
    evaluate_model,
    forecast,
    train,
)


def sines(length=60):
    t = np.arange(float(length))
    return np.stack([np.sin(2 * np.pi * t / 12), np.cos(2 * np.pi * t / 8)], axis=1)


def tiny_cfg(**kw):
    base = dict(n_vars=2, lookback=8, horizon=4, d_model=8, e_layers=1, d_state=2, k_dim=4, dropout=0.0)
    base.update(kw)
    return FMambaConfig(**base)


@pytest.fixture(scope="module")
def trained():
    data = sines(80)
    cfg = TrainConfig(tiny_cfg(), lr=5e-3, batch_size=16, max_epochs=4, patience=3, seed=3)
    ckpt, report = train(cfg, data[:50], data[38:65], data[53:])
    return ckpt, report, data


class TestAdam:
    def test_zero_gradient_leaves_parameter(self):
        p = Parameter([1.0, -2.0])
        adam_step({"p": p}, AdamState(), lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_moves_by_lr(self):
        p = Parameter([1.0, -2.0])
        p.grad[...] = [3.0, -0.5]
        adam_step({"p": p}, AdamState(), lr=0.01)
        # bias correction makes the first update lr * sign(g) up to eps
        np.testing.assert_allclose(p.data, [0.99, -1.99], atol=1e-8)

    def test_minimizes_quadratic(self):
        p = Parameter([1.0])
        opt = Adam({"p": p}, lr=0.05)
        for _ in range(200):
            opt.zero_grad()
            with Tape() as tape:
                loss = (p * p).sum()
            backward(tape, loss)
            opt.step()
        assert abs(p.data[0]) < 0.02


class TestEarlyStopping:
    def test_rising_validation_stops_after_patience(self):
        stopper = EarlyStopping(3)
        epochs = []
        for epoch, score in enumerate([1.0, 2.0, 3.0, 4.0, 5.0], start=1):
            epochs.append(epoch)
            if stopper.update(epoch, score)[1]:
                break
        assert epochs == [1, 2, 3, 4]
        assert stopper.best_epoch == 1

    def test_improvement_resets_counter(self):
        stopper = EarlyStopping(2)
        results = [stopper.update(e, s) for e, s in enumerate([3.0, 4.0, 2.0, 5.0, 6.0], start=1)]
        assert [r[1] for r in results] == [False, False, False, False, True]


class TestTrainConfig:
    @pytest.mark.parametrize("kw", [{"lr": 0.0}, {"patience": 0}, {"max_epochs": 0}, {"batch_size": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(tiny_cfg(), **kw)


class TestTrain:
    def test_single_epoch(self):
        data = sines()
        _, report = train(TrainConfig(tiny_cfg(), max_epochs=1), data, data)
        assert report.epochs_run == 1

    def test_best_checkpoint_has_lowest_validation(self, trained):
        ckpt, report, _ = trained
        best = min(report.epochs, key=lambda e: e.val_mse)
        assert ckpt.epoch == best.epoch == report.best_epoch
        assert ckpt.best_val_mse == best.val_mse

    def test_best_checkpoint_reproduces_validation(self, trained):
        ckpt, _, data = trained
        assert evaluate(ckpt, data[38:65])["mse"] == ckpt.best_val_mse

    def test_report_has_test_metrics(self, trained):
        _, report, _ = trained
        assert report.test_mse is not None and report.test_mae is not None
        assert "test," in report.to_csv()

    def test_report_excludes_timing_by_default(self, trained):
        _, report, _ = trained
        assert "wall_seconds" not in report.to_csv()
        assert "wall_seconds" in report.to_csv(include_timing=True)

    def test_deterministic(self):
        data = sines()
        cfg = TrainConfig(tiny_cfg(dropout=0.1), lr=5e-3, batch_size=8, max_epochs=2, seed=11)
        a = train(cfg, data[:40], data[30:])
        b = train(cfg, data[:40], data[30:])
        assert a[1].to_csv() == b[1].to_csv()
        assert a[0].to_json() == b[0].to_json()

    def test_overfits_small_signal(self):
        data = sines()
        # 49 windows in batches of 10 -> 5 steps per epoch, 500 steps total
        cfg = TrainConfig(tiny_cfg(), lr=1e-2, batch_size=10, max_epochs=100, patience=100, seed=0)
        ckpt, _ = train(cfg, data, data)
        assert evaluate(ckpt, data)["mse"] < 1e-3

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence_is_reported(self):
        data = sines()
        data[20:] *= 1e300
        with pytest.raises(TrainingDiverged) as err:
            train(TrainConfig(tiny_cfg(), batch_size=64, max_epochs=1), data, data)
        assert err.value.epoch == 1 and err.value.batch == 1

    def test_variate_count_mismatch(self):
        with pytest.raises(ValueError, match="variates"):
            train(TrainConfig(tiny_cfg(n_vars=3)), sines(), sines())


class TestEvaluation:
    def test_thread_count_does_not_change_metrics(self, trained, monkeypatch):
        ckpt, _, data = trained
        model = ckpt.build_model()
        one = evaluate_model(model, data, batch_size=5, threads=1)
        four = evaluate_model(model, data, batch_size=5, threads=4)
        assert one == four
        monkeypatch.setenv("FMAMBA_THREADS", "3")
        assert evaluate_model(model, data, batch_size=5) == one

    def test_repeatable(self, trained):
        ckpt, _, data = trained
        assert evaluate(ckpt, data) == evaluate(ckpt, data)


class TestCheckpoint:
    def test_save_load_save_is_byte_identical(self, trained, tmp_path):
        ckpt, _, data = trained
        ckpt = dataclasses.replace(ckpt, scaler=Scaler().fit(data))
        first, second = tmp_path / "a.json", tmp_path / "b.json"
        ckpt.save(first)
        loaded = Checkpoint.load(first)
        loaded.save(second)
        assert first.read_bytes() == second.read_bytes()
        assert evaluate(loaded, data) == evaluate(ckpt, data)
        for name, values in ckpt.params.items():
            np.testing.assert_array_equal(loaded.params[name], values)
        assert loaded.optimizer.step == ckpt.optimizer.step

    def test_rejects_foreign_json(self):
        with pytest.raises(ValueError, match="checkpoint"):
            Checkpoint.from_json('{"format": "other"}')

    def test_rejects_mismatched_parameters(self, trained):
        ckpt, _, _ = trained
        broken = Checkpoint(ckpt.config, dict(list(ckpt.params.items())[1:]))
        with pytest.raises(ValueError, match="do not match"):
            broken.build_model()


class TestForecast:
    def test_rows_columns_and_timestamps(self, trained, tmp_path):
        ckpt, _, data = trained
        stamps = [f"2024-01-01T{h:02d}:00:00" for h in range(12)]
        src, out = tmp_path / "in.csv", tmp_path / "out.csv"
        write_csv(src, ["a", "b"], data[:12], stamps)
        pred = forecast(ckpt, src, out, timestamp_column="timestamp")
        table = load_csv(out, timestamp_column="timestamp")
        assert table.values.shape == (4, 2) == pred.shape
        assert table.names == ["a", "b"]
        assert table.timestamps == [f"2024-01-01T{h:02d}:00:00" for h in range(12, 16)]

    def test_applies_scaler(self, trained, tmp_path):
        ckpt, _, data = trained
        raw = data * 10.0 + 5.0
        scaled = Checkpoint(ckpt.config, ckpt.params, scaler=Scaler(np.full(2, 5.0), np.full(2, 10.0)))
        write_csv(tmp_path / "in.csv", ["a", "b"], raw[:8])
        pred = forecast(scaled, tmp_path / "in.csv", tmp_path / "out.csv")
        expected = ckpt.build_model().predict(data[None, :8])[0] * 10.0 + 5.0
        np.testing.assert_allclose(pred, expected, atol=1e-10)

    def test_too_few_rows(self, trained, tmp_path):
        ckpt, _, data = trained
        write_csv(tmp_path / "in.csv", ["a", "b"], data[:5])
        with pytest.raises(ValueError, match="at least"):
            forecast(ckpt, tmp_path / "in.csv", tmp_path / "out.csv")
