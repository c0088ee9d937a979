"""
Fast attention versus its quadratic form
========================================

The Gaussian feature map turns attention into two small matrix products.
Contracting keys with values first never builds the n x n score matrix, so
the cost grows linearly with the number of tokens.
"""

import numpy as np

from fmamba.attention import FastAttentionParams, fast_attention_forward, fast_attention_oracle
from fmamba.bench import bench_attention
from fmamba.tensor import Rng

rng = Rng(0)
params = FastAttentionParams(d_model=16, k_dim=8, rng=rng)
X = rng.uniform(-1, 1, (2, 300, 16))

# %%
# Same numbers either way round: the factorized path against the explicit
# (Q'K'^T)V product.
fast = fast_attention_forward(params, X).data
oracle = fast_attention_oracle(params, X)
print("max |fast - oracle| =", np.abs(fast - oracle).max())

# %%
# Timing. Each doubling of n should roughly double the fast path and
# roughly quadruple softmax attention.
rows = bench_attention([256, 512, 1024, 2048, 4096], d_model=64, k_dim=64, repeats=5)
print(f"{'n':>6} {'fast ms':>9} {'x':>5} {'softmax ms':>11} {'x':>5}")
for r in rows:
    fr = f"{r.fast_ratio:.2f}" if r.fast_ratio else ""
    sr = f"{r.self_ratio:.2f}" if r.self_ratio else ""
    print(f"{r.n:>6} {r.fast_seconds * 1e3:>9.2f} {fr:>5} {r.self_seconds * 1e3:>11.2f} {sr:>5}")
