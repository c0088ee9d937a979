"""Command-line entry point: train, eval, forecast, bench, gradcheck, ablate."""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import data as D
from .bench import bench_attention, rows_to_csv
from .gradcheck import TOLERANCE, run_all
from .model import VARIANTS, FMambaConfig
from .train import Checkpoint, TrainConfig, evaluate, forecast, train

# config keys follow the published hyperparameter names (el, bs, ...), mapped to FMambaConfig / TrainConfig fields
_MODEL_KEYS = {
    "el": ("e_layers", int),
    "d_model": ("d_model", int),
    "dropout": ("dropout", float),
    "d_state": ("d_state", int),
    "k_dim": ("k_dim", int),
    "expansion": ("expansion", int),
    "d_conv": ("d_conv", int),
    "variant": ("variant", str),
    "lookback": ("lookback", int),
    "horizon": ("horizon", int),
    "d_ff": ("d_ff", int),
    "chained_residual": ("chained_residual", lambda s: s.lower() in ("1", "true", "yes")),
}
_TRAIN_KEYS = {
    "bs": ("batch_size", int),
    "lr": ("lr", float),
    "patience": ("patience", int),
    "max_epochs": ("max_epochs", int),
    "seed": ("seed", int),
}
_DATA_KEYS = ("split", "has_header", "timestamp_column", "dataset")

METRICS_HEADER = ["dataset", "horizon", "variant", "mse", "mae", "epochs_run", "wall_seconds"]


class ConfigError(ValueError):
    pass


@dataclass
class RunSettings:
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    split: D.SplitSpec = field(default_factory=lambda: D.SplitSpec(ratios=(0.7, 0.1, 0.2)))
    has_header: bool = True
    timestamp_column: int | str | None = None
    dataset: str = ""


def parse_config(text: str) -> RunSettings:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    settings = RunSettings()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in _MODEL_KEYS:
                name, conv = _MODEL_KEYS[key]
                settings.model[name] = conv(value)
            elif key in _TRAIN_KEYS:
                name, conv = _TRAIN_KEYS[key]
                settings.train[name] = conv(value)
            elif key == "split":
                parts = [p.strip() for p in value.split(",")]
                if len(parts) != 3:
                    raise ConfigError(f"line {lineno}: split needs three values")
                if all(p.isdigit() for p in parts):
                    settings.split = D.SplitSpec(lengths=tuple(int(p) for p in parts))
                else:
                    settings.split = D.SplitSpec(ratios=tuple(float(p) for p in parts))
            elif key == "has_header":
                settings.has_header = value.lower() in ("1", "true", "yes")
            elif key == "timestamp_column":
                settings.timestamp_column = int(value) if value.isdigit() else value
            elif key == "dataset":
                settings.dataset = value
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return settings


def _load_settings(path) -> RunSettings:
    if path is None:
        return RunSettings()
    return parse_config(Path(path).read_text(encoding="utf-8"))


@dataclass
class PreparedData:
    table: D.SeriesTable
    scaler: D.Scaler
    train: object
    val: object
    test: object


def _prepare(settings: RunSettings, data_path, lookback: int) -> PreparedData:
    table = D.load_csv(data_path, has_header=settings.has_header, timestamp_column=settings.timestamp_column)
    tr, va, te = D.split(table, settings.split, lookback=lookback)
    scaler = D.Scaler().fit(tr.values)
    return PreparedData(table, scaler, scaler.transform(tr.values), scaler.transform(va.values), scaler.transform(te.values))


def _train_config(settings: RunSettings, n_vars: int, seed: int | None, variant: str | None = None) -> TrainConfig:
    model_kwargs = {"d_model": 64, "e_layers": 2, "k_dim": 64, **settings.model, "n_vars": n_vars}
    if variant is not None:
        model_kwargs["variant"] = variant
    train_kwargs = dict(settings.train)
    if seed is not None:
        train_kwargs["seed"] = seed
    return TrainConfig(model=FMambaConfig(**model_kwargs), **train_kwargs)


def _metrics_rows(rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    w.writerows(rows)
    return buf.getvalue()


def _dataset_name(settings: RunSettings, data_path) -> str:
    return settings.dataset or Path(data_path).stem


def _run_training(settings, data_path, seed, variant=None, log=None):
    probe = D.load_csv(data_path, has_header=settings.has_header, timestamp_column=settings.timestamp_column)
    cfg = _train_config(settings, probe.n_vars, seed, variant)
    prepared = _prepare(settings, data_path, cfg.model.lookback)
    ckpt, report = train(cfg, prepared.train, prepared.val, prepared.test, log=log)
    ckpt.scaler = prepared.scaler
    ckpt.meta = {
        "split": list(settings.split.lengths or settings.split.ratios),
        "split_kind": "lengths" if settings.split.lengths else "ratios",
        "has_header": settings.has_header,
        "timestamp_column": settings.timestamp_column,
        "dataset": _dataset_name(settings, data_path),
    }
    return cfg, ckpt, report


def cmd_train(args) -> int:
    settings = _load_settings(args.config)
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    cfg, ckpt, report = _run_training(settings, args.data, args.seed, log=log)
    ckpt.save(out / "checkpoint.json")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    row = [_dataset_name(settings, args.data), cfg.model.horizon, cfg.model.variant, repr(report.test_mse),
           repr(report.test_mae), report.epochs_run, f"{report.wall_seconds:.3f}"]
    (out / "metrics.csv").write_text(_metrics_rows([row]), encoding="utf-8")
    print(f"test mse {report.test_mse:.6f} mae {report.test_mae:.6f} ({report.epochs_run} epochs)")
    return 0


def _settings_from_checkpoint(ckpt: Checkpoint) -> RunSettings:
    meta = ckpt.meta or {}
    s = RunSettings()
    if meta.get("split"):
        vals = tuple(meta["split"])
        s.split = D.SplitSpec(lengths=tuple(int(v) for v in vals)) if meta.get("split_kind") == "lengths" else D.SplitSpec(ratios=vals)
    s.has_header = meta.get("has_header", True)
    s.timestamp_column = meta.get("timestamp_column")
    s.dataset = meta.get("dataset", "")
    return s


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    settings = _load_settings(args.config) if args.config else _settings_from_checkpoint(ckpt)
    table = D.load_csv(args.data, has_header=settings.has_header, timestamp_column=settings.timestamp_column)
    _, _, te = D.split(table, settings.split, lookback=ckpt.config.lookback)
    values = ckpt.scaler.transform(te.values) if ckpt.scaler is not None else te.values
    t0 = time.perf_counter()
    metrics = evaluate(ckpt, values)
    row = [_dataset_name(settings, args.data), ckpt.config.horizon, ckpt.config.variant, repr(metrics["mse"]),
           repr(metrics["mae"]), ckpt.epoch, f"{time.perf_counter() - t0:.3f}"]
    text = _metrics_rows([row])
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_forecast(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    meta = ckpt.meta or {}
    out = args.out or "forecast.csv"
    forecast(ckpt, args.data, out, has_header=meta.get("has_header", True), timestamp_column=meta.get("timestamp_column"))
    print(f"wrote {ckpt.config.horizon} rows to {out}")
    return 0


def cmd_bench(args) -> int:
    n_list = [int(v) for v in args.n_list.split(",")]
    rows = bench_attention(n_list, args.d_model, args.k_dim, args.repeats, seed=args.seed or 0)
    text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_all(args.seed or 0)
    lines = ["check,max_rel_error,passed"] + [f"{r.name},{r.max_rel_error:.3e},{r.passed}" for r in results]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} checks above {TOLERANCE:g}: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_ablate(args) -> int:
    settings = _load_settings(args.config)
    rows = []
    for variant in VARIANTS:
        cfg, _, report = _run_training(settings, args.data, args.seed, variant=variant)
        rows.append([_dataset_name(settings, args.data), cfg.model.horizon, variant, repr(report.test_mse),
                     repr(report.test_mae), report.epochs_run, f"{report.wall_seconds:.3f}"])
        if not args.quiet:
            print(f"{variant}: mse {report.test_mse:.6f} mae {report.test_mae:.6f}", file=sys.stderr)
    text = _metrics_rows(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="key=value config file")
    common.add_argument("--data", default=None, help="input CSV")
    common.add_argument("--out", default=None)

    parser = argparse.ArgumentParser(prog="fmamba", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train and save a checkpoint")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train, needs_data=True)

    p = sub.add_parser("eval", parents=[common], help="test-split metrics of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval, needs_data=True)

    p = sub.add_parser("forecast", parents=[common], help="predict the rows after a CSV")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_forecast, needs_data=True)

    p = sub.add_parser("bench", parents=[common], help="attention scaling benchmark")
    p.add_argument("--n-list", default="256,512,1024,2048,4096")
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--k-dim", type=int, default=64)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench, needs_data=False)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.set_defaults(func=cmd_gradcheck, needs_data=False)

    p = sub.add_parser("ablate", parents=[common], help="train all five variants and compare")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_ablate, needs_data=True)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.needs_data and not args.data:
        parser.error(f"{args.command} needs --data")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"fmamba {args.command}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
