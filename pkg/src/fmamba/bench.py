"""Wall-clock scaling of fast attention versus softmax self-attention."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .attention import FastAttentionParams, SelfAttentionParams, fast_attention_forward, fast_attention_oracle, self_attention_forward
from .tensor import Rng

ORACLE_MAX_N = 512


@dataclass
class BenchRow:
    n: int
    fast_seconds: float
    self_seconds: float
    fast_ratio: float | None  # time(n) / time(previous n)
    self_ratio: float | None
    oracle_max_abs_diff: float | None


def _median_time(fn, repeats: int) -> float:
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_attention(
    n_list,
    d_model: int = 64,
    k_dim: int = 64,
    repeats: int = 5,
    seed: int = 0,
    batch: int = 1,
) -> list[BenchRow]:
    n_list = list(n_list)
    if n_list != sorted(n_list):
        raise ValueError("n_list must be ascending")
    if repeats < 5:
        raise ValueError("repeats must be >= 5")
    rng = Rng(seed)
    fast = FastAttentionParams(d_model, k_dim, rng)
    soft = SelfAttentionParams(d_model, rng)
    rows: list[BenchRow] = []
    for n in n_list:
        X = rng.uniform(-1.0, 1.0, (batch, n, d_model))
        diff = None
        if n <= ORACLE_MAX_N:
            diff = float(np.max(np.abs(fast_attention_forward(fast, X).data - fast_attention_oracle(fast, X))))
        t_fast = _median_time(lambda: fast_attention_forward(fast, X), repeats)
        t_self = _median_time(lambda: self_attention_forward(soft, X), repeats)
        prev = rows[-1] if rows else None
        rows.append(
            BenchRow(
                n,
                t_fast,
                t_self,
                t_fast / prev.fast_seconds if prev else None,
                t_self / prev.self_seconds if prev else None,
                diff,
            )
        )
    return rows


def rows_to_csv(rows: list[BenchRow]) -> str:
    def fmt(v):
        return "" if v is None else repr(v)

    lines = ["n,fast_seconds,self_seconds,fast_ratio,self_ratio,oracle_max_abs_diff"]
    for r in rows:
        lines.append(
            ",".join([str(r.n), fmt(r.fast_seconds), fmt(r.self_seconds), fmt(r.fast_ratio), fmt(r.self_ratio), fmt(r.oracle_max_abs_diff)])
        )
    return "\n".join(lines) + "\n"
