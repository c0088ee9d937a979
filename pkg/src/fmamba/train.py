"""Adam, early stopping, the training loop, evaluation, checkpoints and forecasting."""

from __future__ import annotations

import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from . import data as D
from .model import FMamba, FMambaConfig, build_variant, model_forward
from .tensor import Parameter, Rng, Tape, backward

CHECKPOINT_FORMAT = "fmamba-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    model: FMambaConfig
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Parameter],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """Bias-corrected Adam update using each parameter's accumulated ``grad``."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    def __init__(self, params: dict[str, Parameter], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr, self.betas, self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


class EarlyStopping:
    """Tracks the best validation score; signals a stop after ``patience`` epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, score: float) -> tuple[bool, bool]:
        """Returns (improved, stop)."""
        if score < self.best:
            self.best = score
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True, False
        self.bad_epochs += 1
        return False, self.bad_epochs >= self.patience


# ---------------------------------------------------------------------------
# loss and evaluation


def mse_loss(pred, target):
    diff = pred - target
    return (diff * diff).mean()


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FMAMBA_THREADS", "1")))
    except ValueError:
        return 1


def evaluate_model(model: FMamba, segment, batch_size: int = 64, threads: int | None = None) -> dict[str, float]:
    """MSE/MAE over every window of ``segment`` with dropout off.

    Per-batch sums are reduced in batch order, so the result does not depend
    on the thread count.
    """
    cfg = model.config
    values = segment.values if isinstance(segment, D.SeriesTable) else np.asarray(segment, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != cfg.n_vars:
        raise ValueError(f"model expects {cfg.n_vars} variates, data has shape {values.shape}")
    batches = list(D.make_windows(values, cfg.lookback, cfg.horizon, batch_size))

    def run(batch: D.WindowBatch):
        err = model.predict(batch.inputs) - batch.targets
        return float(np.sum(err * err)), float(np.sum(np.abs(err))), err.size

    threads = threads or _threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, batches))
    else:
        parts = [run(b) for b in batches]
    total = sum(p[2] for p in parts)
    sq = 0.0
    ab = 0.0
    for s, a, _ in parts:
        sq += s
        ab += a
    return {"mse": sq / total, "mae": ab / total}


# ---------------------------------------------------------------------------
# run report


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mse: float
    val_mae: float


@dataclass
class RunReport:
    config: dict
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    test_mse: float | None = None
    test_mae: float | None = None
    wall_seconds: float = 0.0

    @property
    def epochs_run(self) -> int:
        return len(self.epochs)

    def to_csv(self, include_timing: bool = False) -> str:
        """Deterministic text form; wall time is left out unless asked for."""
        buf = io.StringIO()
        for key in sorted(self.config):
            buf.write(f"# {key}={self.config[key]}\n")
        buf.write(f"# best_epoch={self.best_epoch}\n# stopped_early={self.stopped_early}\n")
        if include_timing:
            buf.write(f"# wall_seconds={self.wall_seconds:.3f}\n")
        buf.write("kind,epoch,train_loss,mse,mae\n")
        for e in self.epochs:
            buf.write(f"epoch,{e.epoch},{e.train_loss!r},{e.val_mse!r},{e.val_mae!r}\n")
        if self.test_mse is not None:
            buf.write(f"test,{self.best_epoch},,{self.test_mse!r},{self.test_mae!r}\n")
        return buf.getvalue()


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config: FMambaConfig
    params: dict[str, np.ndarray]
    epoch: int = 0
    best_val_mse: float | None = None
    optimizer: AdamState | None = None
    scaler: D.Scaler | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: FMamba, **kwargs) -> "Checkpoint":
        params = {name: p.data.copy() for name, p in model.named_parameters()}
        return cls(model.config, params, **kwargs)

    def build_model(self) -> FMamba:
        model = build_variant(self.config)
        named = dict(model.named_parameters())
        if set(named) != set(self.params):
            missing = set(named) ^ set(self.params)
            raise ValueError(f"checkpoint parameters do not match the model: {sorted(missing)[:5]}")
        for name, p in named.items():
            p.assign(self.params[name])
        return model

    def to_json(self) -> str:
        def arr(a: np.ndarray) -> dict:
            return {"shape": list(a.shape), "values": [float(x) for x in a.reshape(-1)]}

        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "best_val_mse": self.best_val_mse,
            "parameters": [{"name": k, **arr(v)} for k, v in self.params.items()],
            "optimizer": None,
            "scaler": None,
            "meta": self.meta,
        }
        if self.optimizer is not None:
            doc["optimizer"] = {
                "step": self.optimizer.step,
                "m": [{"name": k, **arr(v)} for k, v in self.optimizer.m.items()],
                "v": [{"name": k, **arr(v)} for k, v in self.optimizer.v.items()],
            }
        if self.scaler is not None and self.scaler.mean is not None:
            doc["scaler"] = {"mean": arr(self.scaler.mean), "std": arr(self.scaler.std)}
        # json writes floats with repr(), the shortest round-tripping form
        return json.dumps(doc, indent=1, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        doc = json.loads(text)
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not an fmamba checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')}")

        def arr(rec: dict) -> np.ndarray:
            return np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])

        opt = None
        if doc["optimizer"] is not None:
            o = doc["optimizer"]
            opt = AdamState(
                step=o["step"],
                m={r["name"]: arr(r) for r in o["m"]},
                v={r["name"]: arr(r) for r in o["v"]},
            )
        scaler = None
        if doc["scaler"] is not None:
            scaler = D.Scaler(arr(doc["scaler"]["mean"]), arr(doc["scaler"]["std"]))
        return cls(
            config=FMambaConfig.from_dict(doc["config"]),
            params={r["name"]: arr(r) for r in doc["parameters"]},
            epoch=doc["epoch"],
            best_val_mse=doc["best_val_mse"],
            optimizer=opt,
            scaler=scaler,
            meta=doc.get("meta", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# training


def _values(segment) -> np.ndarray:
    return segment.values if isinstance(segment, D.SeriesTable) else np.asarray(segment, dtype=np.float64)


def train(
    config: TrainConfig,
    train_data,
    val_data,
    test_data=None,
    log=None,
) -> tuple[Checkpoint, RunReport]:
    """Fit with MSE loss and Adam; keep the parameters with the lowest validation MSE.

    Segments are arrays (T, n) or SeriesTables, already scaled.
    """
    started = time.perf_counter()
    cfg = config.model
    train_values = _values(train_data)
    if train_values.shape[1] != cfg.n_vars:
        raise ValueError(f"model expects {cfg.n_vars} variates, training data has {train_values.shape[1]}")
    model = build_variant(cfg, seed=config.seed)
    params = dict(model.named_parameters())
    opt = Adam(params, config.lr, (config.beta1, config.beta2), config.eps)
    rng = Rng(config.seed)
    shuffle_rng = rng.child(1)
    dropout_rng = rng.child(2)

    report = RunReport(config={**cfg.to_dict(), **{k: v for k, v in asdict(config).items() if k != "model"}})
    stopper = EarlyStopping(config.patience)
    best = Checkpoint.from_model(model)

    for epoch in range(1, config.max_epochs + 1):
        total, count = 0.0, 0
        batches = D.make_windows(train_values, cfg.lookback, cfg.horizon, config.batch_size, True, shuffle_rng)
        for b, batch in enumerate(batches, start=1):
            opt.zero_grad()
            with Tape() as tape:
                loss = mse_loss(model_forward(model, batch.inputs, dropout_rng, True), batch.targets)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDiverged(epoch, b, value)
                backward(tape, loss)
            opt.step()
            total += value * len(batch)
            count += len(batch)
        val = evaluate_model(model, val_data)
        report.epochs.append(EpochRecord(epoch, total / count, val["mse"], val["mae"]))
        if log is not None:
            log(f"epoch {epoch}: train {total / count:.6f} val mse {val['mse']:.6f} mae {val['mae']:.6f}")
        improved, stop = stopper.update(epoch, val["mse"])
        if improved:
            best = Checkpoint.from_model(
                model,
                epoch=epoch,
                best_val_mse=val["mse"],
                optimizer=AdamState(
                    opt.state.step,
                    {k: v.copy() for k, v in opt.state.m.items()},
                    {k: v.copy() for k, v in opt.state.v.items()},
                ),
            )
        if stop:
            report.stopped_early = epoch < config.max_epochs
            break

    report.best_epoch = best.epoch
    if test_data is not None:
        metrics = evaluate_model(best.build_model(), test_data)
        report.test_mse, report.test_mae = metrics["mse"], metrics["mae"]
    report.wall_seconds = time.perf_counter() - started
    return best, report


def evaluate(checkpoint: Checkpoint, data_split) -> dict[str, float]:
    return evaluate_model(checkpoint.build_model(), data_split)


# ---------------------------------------------------------------------------
# forecasting


def _continue_timestamps(stamps: list[str], steps: int) -> list[str] | None:
    """Extend a regular timestamp column; None when the labels are not regular times or numbers."""
    if len(stamps) < 2:
        return None
    try:
        a, b = float(stamps[-2]), float(stamps[-1])
        step = b - a
        as_int = all(s.lstrip("-").isdigit() for s in stamps[-2:])
        return [str(int(b + step * k)) if as_int else repr(b + step * k) for k in range(1, steps + 1)]
    except ValueError:
        pass
    try:
        a, b = datetime.fromisoformat(stamps[-2]), datetime.fromisoformat(stamps[-1])
    except ValueError:
        return None
    step = b - a
    sep = "T" if "T" in stamps[-1] else " "
    return [(b + step * k).isoformat(sep=sep) for k in range(1, steps + 1)]


def forecast(checkpoint: Checkpoint, csv_in, csv_out, has_header: bool = True, timestamp_column=None) -> np.ndarray:
    """Predict the next ``horizon`` rows after the last ``lookback`` rows of ``csv_in``."""
    cfg = checkpoint.config
    table = D.load_csv(csv_in, has_header=has_header, timestamp_column=timestamp_column)
    if table.n_vars != cfg.n_vars:
        raise ValueError(f"checkpoint expects {cfg.n_vars} columns, {csv_in} has {table.n_vars}")
    if table.length < cfg.lookback:
        raise ValueError(f"need at least {cfg.lookback} rows, {csv_in} has {table.length}")
    history = table.values[-cfg.lookback :]
    scaler = checkpoint.scaler
    if scaler is not None:
        history = scaler.transform(history)
    pred = checkpoint.build_model().predict(history[None])[0]
    if scaler is not None:
        pred = scaler.inverse_transform(pred)
    stamps = _continue_timestamps(table.timestamps, cfg.horizon) if table.timestamps else None
    D.write_csv(csv_out, table.names, pred, stamps)
    return pred
