"""Finite-difference checks of every differentiable operation and of the toy model end to end."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import FastAttentionParams, SelfAttentionParams, fast_attention_forward, self_attention_forward
from .model import FMambaConfig, build_variant, fmamba_layer_forward, FMambaLayer, model_forward
from .nn import LayerNorm, MlpBlock, embed, layer_norm_forward, mlp_block_forward, PositionalEncoding
from .ssm import MambaParams, causal_depthwise_conv1d, discretize, mamba_block_forward, selective_scan
from .tensor import Parameter, Rng, Tape

TOLERANCE = 1e-4


@dataclass
class GradCheck:
    name: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def check(name: str, loss_fn: Callable[[], T.Tensor], params: list[Parameter], h: float = 1e-5) -> GradCheck:
    """Compare tape gradients of ``loss_fn`` with central differences for each parameter."""
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    T.backward(tape, loss)
    worst = 0.0
    for p in params:
        numeric = T.finite_difference_gradient(loss_fn, p, h)
        worst = max(worst, T.relative_error(p.grad, numeric))
    return GradCheck(name, worst)


def _weighted_sum(out: T.Tensor, w: np.ndarray) -> T.Tensor:
    # random projection so every output element contributes a distinct weight
    return (out * w).sum()


def _param(rng: Rng, shape) -> Parameter:
    return Parameter(rng.uniform(-1.0, 1.0, shape))


def op_checks(seed: int = 0) -> list[GradCheck]:
    rng = Rng(seed)
    out: list[GradCheck] = []

    a, b = _param(rng, (4, 5)), _param(rng, (5, 6))
    w = rng.uniform(-1, 1, (4, 6))
    out.append(check("matmul", lambda: _weighted_sum(a @ b, w), [a, b]))

    ab, bb = _param(rng, (2, 3, 4)), _param(rng, (4, 2))
    w = rng.uniform(-1, 1, (2, 3, 2))
    out.append(check("matmul_batched_broadcast", lambda: _weighted_sum(ab @ bb, w), [ab, bb]))

    x = _param(rng, (3, 4))
    w = rng.uniform(-1, 1, (3, 4))
    for f in ("relu", "silu", "sigmoid", "softplus", "exp", "expm1", "gaussian_half", "negate", "square"):
        out.append(check(f"unary_{f}", lambda f=f: _weighted_sum(T.map_unary(x, f), w), [x]))
    out.append(check("unary_scale", lambda: _weighted_sum(T.scale(x, -2.5), w), [x]))
    pos = Parameter(rng.uniform(0.5, 2.0, (3, 4)))
    out.append(check("unary_power", lambda: _weighted_sum(T.power(pos, -0.5), w), [pos]))
    out.append(check("unary_log", lambda: _weighted_sum(T.map_unary(pos, "log"), w), [pos]))

    y = _param(rng, (3, 4))
    v = _param(rng, (4,))
    out.append(check("binary_add_sub", lambda: _weighted_sum(x + v - y, w), [x, y, v]))
    out.append(check("binary_mul_div", lambda: _weighted_sum(x * v / (pos + 1.0), w), [x, v, pos]))

    w1 = rng.uniform(-1, 1, (4,))
    out.append(check("reduce_sum_axis0", lambda: _weighted_sum(x.sum(axis=0), w1), [x]))
    w3 = rng.uniform(-1, 1, (3,))
    out.append(check("reduce_mean_axis1", lambda: _weighted_sum(x.mean(axis=1), w3), [x]))
    out.append(check("reduce_mean_all", lambda: T.square(x).mean(), [x]))
    wp = rng.uniform(-1, 1, (4, 3))
    out.append(check("permute", lambda: _weighted_sum(x.permute(1, 0), wp), [x]))
    return out


def block_checks(seed: int = 0) -> list[GradCheck]:
    rng = Rng(seed)
    out: list[GradCheck] = []
    X = rng.uniform(-1, 1, (2, 5, 8))

    mlp = MlpBlock(8, 6, 8, rng)
    wo = rng.uniform(-1, 1, (2, 5, 8))
    out.append(check("mlp_block", lambda: _weighted_sum(mlp_block_forward(mlp, X), wo), mlp.parameters()))

    ln = LayerNorm(8)
    ln.gain.assign(rng.uniform(0.5, 1.5, (8,)))
    ln.bias.assign(rng.uniform(-0.5, 0.5, (8,)))
    xp = _param(rng, (2, 5, 8))
    out.append(check("layer_norm", lambda: _weighted_sum(layer_norm_forward(ln, xp), wo), ln.parameters() + [xp]))

    emb = MlpBlock(12, 8, 8, rng)
    pe = PositionalEncoding(5, 8)
    raw = rng.uniform(-1, 1, (2, 5, 12))
    out.append(check("embed", lambda: _weighted_sum(embed(raw, emb, pe), wo), emb.parameters()))

    fa = FastAttentionParams(8, 4, rng)
    out.append(check("fast_attention", lambda: _weighted_sum(fast_attention_forward(fa, X), wo), fa.parameters()))
    sa = SelfAttentionParams(8, rng)
    out.append(check("self_attention", lambda: _weighted_sum(self_attention_forward(sa, X), wo), sa.parameters()))

    E, N, V = 6, 3, 7
    xc = _param(rng, (2, V, E))
    kern = _param(rng, (E, 4))
    we = rng.uniform(-1, 1, (2, V, E))
    out.append(check("causal_conv1d", lambda: _weighted_sum(causal_depthwise_conv1d(xc, kern), we), [xc, kern]))

    delta = Parameter(rng.uniform(0.05, 1.0, (2, V, E)))
    A_log = Parameter(rng.uniform(-1.0, 1.0, (E, N)))
    Bm = _param(rng, (2, V, N))
    C = _param(rng, (2, V, N))
    wa = rng.uniform(-1, 1, (2, V, E, N))

    def disc(which):
        sys = discretize(delta, T.negate(T.exp(A_log)), Bm)
        return _weighted_sum(getattr(sys, which), wa)

    out.append(check("discretize_A_bar", lambda: disc("A_bar"), [delta, A_log]))
    out.append(check("discretize_B_bar", lambda: disc("B_bar"), [delta, A_log, Bm]))

    for method in ("sequential", "parallel"):
        def scan_loss(method=method):
            sys = discretize(delta, T.negate(T.exp(A_log)), Bm)
            return _weighted_sum(selective_scan(sys, xc, C, method=method), we)

        out.append(check(f"selective_scan_{method}", scan_loss, [delta, A_log, Bm, C, xc]))

    mp = MambaParams(8, 2, rng, expand=2, d_conv=4)
    X1 = rng.uniform(-1, 1, (1, 5, 8))
    w1 = rng.uniform(-1, 1, (1, 5, 8))
    out.append(check("mamba_block", lambda: _weighted_sum(mamba_block_forward(mp, X1), w1), mp.parameters()))
    return out


def model_checks(seed: int = 0) -> list[GradCheck]:
    rng = Rng(seed)
    out: list[GradCheck] = []
    cfg = FMambaConfig(n_vars=4, lookback=8, horizon=4, d_model=8, e_layers=1, d_state=2, k_dim=4, dropout=0.0)

    layer = FMambaLayer(cfg, rng)
    Xi = rng.uniform(-1, 1, (2, 4, 8))
    w = rng.uniform(-1, 1, (2, 4, 8))
    out.append(check("fmamba_layer", lambda: _weighted_sum(fmamba_layer_forward(layer, Xi), w), layer.parameters()))

    X = rng.normal((2, 8, 4))
    Y = rng.normal((2, 4, 4))
    for variant in ("full", "self_attn_plus_mamba", "fast_attn_plus_self_attn", "fast_attn_only", "mamba_only"):
        model = build_variant(cfg, seed=seed, variant=variant)

        def loss(model=model):
            d = model_forward(model, X) - Y
            return (d * d).mean()

        out.append(check(f"model_{variant}_mse", loss, model.parameters()))
    return out


def run_all(seed: int = 0) -> list[GradCheck]:
    return op_checks(seed) + block_checks(seed) + model_checks(seed)
