"""CSV ingestion, chronological splits, scaling, sliding windows and error metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .tensor import Rng

STD_FLOOR = 1e-8


class CSVFormatError(ValueError):
    """Malformed input file. ``row`` and ``column`` are 1-based when known."""

    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass
class SeriesTable:
    names: list[str]
    values: np.ndarray  # (T, n)
    timestamps: list[str] | None = None
    granularity: str = ""

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "SeriesTable":
        ts = self.timestamps[start:stop] if self.timestamps is not None else None
        return SeriesTable(list(self.names), self.values[start:stop], ts, self.granularity)


def load_csv(
    path,
    has_header: bool = True,
    timestamp_column: int | str | None = None,
    granularity: str = "",
) -> SeriesTable:
    """Read a numeric table; the optional timestamp column is kept as labels only."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise CSVFormatError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise CSVFormatError(f"{path} is empty")

    header = rows[0] if has_header else None
    body = rows[1:] if has_header else rows
    width = len(rows[0])
    names = [h.strip() for h in header] if header else [f"v{i}" for i in range(width)]

    ts_idx = None
    if timestamp_column is not None:
        if isinstance(timestamp_column, str):
            if timestamp_column not in names:
                raise CSVFormatError(f"timestamp column {timestamp_column!r} not in header")
            ts_idx = names.index(timestamp_column)
        else:
            ts_idx = int(timestamp_column)

    values = np.empty((len(body), width - (ts_idx is not None)))
    stamps = [] if ts_idx is not None else None
    for r, row in enumerate(body, start=1):
        if len(row) != width:
            raise CSVFormatError(f"row {r} has {len(row)} cells, expected {width}", row=r)
        out_c = 0
        for c, cell in enumerate(row):
            if c == ts_idx:
                stamps.append(cell.strip())
                continue
            try:
                v = float(cell)
            except ValueError:
                raise CSVFormatError(
                    f"non-numeric cell {cell!r} at row {r}, column {c + 1}", row=r, column=c + 1
                ) from None
            if not math.isfinite(v):
                raise CSVFormatError(f"non-finite cell {cell!r} at row {r}, column {c + 1}", row=r, column=c + 1)
            values[r - 1, out_c] = v
            out_c += 1
    if ts_idx is not None:
        names = names[:ts_idx] + names[ts_idx + 1 :]
    return SeriesTable(names, values, stamps, granularity)


def write_csv(path, names: Sequence[str], values: np.ndarray, timestamps: Sequence[str] | None = None) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["timestamp"] if timestamps is not None else []) + list(names))
        for i, row in enumerate(values):
            cells = [repr(float(v)) for v in row]
            w.writerow(([timestamps[i]] if timestamps is not None else []) + cells)


@dataclass(frozen=True)
class SplitSpec:
    """Either explicit segment lengths or fractions of the series."""

    lengths: tuple[int, int, int] | None = None
    ratios: tuple[float, float, float] | None = None

    def __post_init__(self):
        if (self.lengths is None) == (self.ratios is None):
            raise ValueError("give exactly one of lengths or ratios")
        if self.ratios is not None and (min(self.ratios) < 0 or sum(self.ratios) > 1.0 + 1e-12):
            raise ValueError(f"ratios must be nonnegative and sum to at most 1, got {self.ratios}")
        if self.lengths is not None and min(self.lengths) < 0:
            raise ValueError(f"lengths must be nonnegative, got {self.lengths}")

    def resolve(self, total: int) -> tuple[int, int, int]:
        if self.lengths is not None:
            return tuple(int(x) for x in self.lengths)
        # tolerance absorbs float products like 0.7 * 10 = 7.000000000000001 either way
        return tuple(int(math.floor(r * total + 1e-9)) for r in self.ratios)


def split(table: SeriesTable, spec: SplitSpec, lookback: int = 0) -> tuple[SeriesTable, SeriesTable, SeriesTable]:
    """Chronological train/val/test segments.

    With ``lookback > 0`` the validation and test segments are extended
    backwards by up to that many rows so their first windows have full
    history (the targets never leave the segment's own range).
    """
    n_train, n_val, n_test = spec.resolve(table.length)
    if n_train + n_val + n_test > table.length:
        raise ValueError(f"split {(n_train, n_val, n_test)} exceeds series length {table.length}")
    b1, b2 = n_train, n_train + n_val
    b3 = b2 + n_test
    return (
        table.slice(0, b1),
        table.slice(max(b1 - lookback, 0), b2),
        table.slice(max(b2 - lookback, 0), b3),
    )


class Scaler:
    """Per-column standardization fitted on training data only."""

    def __init__(self, mean=None, std=None):
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = None if std is None else np.asarray(std, dtype=np.float64)

    def fit(self, values: np.ndarray) -> "Scaler":
        values = np.asarray(values, dtype=np.float64)
        self.mean = values.mean(axis=0)
        self.std = np.maximum(values.std(axis=0), STD_FLOOR)
        return self

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


@dataclass
class WindowBatch:
    inputs: np.ndarray  # (B, L, n)
    targets: np.ndarray  # (B, tau, n)
    starts: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __len__(self) -> int:
        return self.inputs.shape[0]


def window_count(length: int, lookback: int, horizon: int) -> int:
    return length - lookback - horizon + 1


def make_windows(
    segment,
    lookback: int,
    horizon: int,
    batch_size: int,
    shuffle: bool = False,
    rng: Rng | None = None,
) -> Iterator[WindowBatch]:
    """Yield batches of (lookback, horizon) windows; the last batch may be partial."""
    values = segment.values if isinstance(segment, SeriesTable) else np.asarray(segment, dtype=np.float64)
    count = window_count(values.shape[0], lookback, horizon)
    if count < 1:
        raise ValueError(
            f"segment of length {values.shape[0]} is too short for lookback {lookback} + horizon {horizon}"
        )
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(count)
    if shuffle:
        if rng is None:
            raise ValueError("shuffling needs an Rng")
        order = rng.permutation(count)
    span = np.arange(lookback + horizon)
    for i in range(0, count, batch_size):
        starts = order[i : i + batch_size]
        block = values[starts[:, None] + span]  # (B, L + tau, n)
        yield WindowBatch(block[:, :lookback].copy(), block[:, lookback:].copy(), starts.copy())


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    t = np.asarray(getattr(truth, "data", truth), dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs truth {t.shape}")
    return p, t


def mse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean((p - t) ** 2))


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def coupled_sinusoids(n_vars: int, length: int, seed: int, n_latent: int = 4, noise: float = 0.05) -> np.ndarray:
    """Multivariate test signal: shared latent sinusoids mixed across variates.

    Each variate is a random mix of the latents plus a lagged copy of its
    neighbour, so variates carry information about each other.
    """
    rng = Rng(seed)
    t = np.arange(length, dtype=np.float64)
    periods = rng.uniform(12.0, 96.0, (n_latent,))
    phases = rng.uniform(0.0, 2 * np.pi, (n_latent,))
    latents = np.sin(2 * np.pi * t[:, None] / periods + phases)  # (T, K)
    mix = rng.normal((n_latent, n_vars))
    base = latents @ mix
    coupled = base + 0.5 * np.roll(np.roll(base, 1, axis=1), 6, axis=0)
    return coupled + noise * rng.normal((length, n_vars))


def persistence_forecast(inputs: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observed row for every future step."""
    return np.repeat(inputs[:, -1:, :], horizon, axis=1)
