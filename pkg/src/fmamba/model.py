"""FMamba forecaster: embedding, stacked attention/SSM layers, projector, and ablation variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import tensor as T
from .attention import FastAttentionParams, SelfAttentionParams, fast_attention_forward, self_attention_forward
from .nn import LayerNorm, MlpBlock, Module, PositionalEncoding, dropout_forward, embed, uniform_init
from .ssm import MambaParams, mamba_block_forward
from .tensor import Rng, Tensor

VARIANTS = ("full", "self_attn_plus_mamba", "fast_attn_plus_self_attn", "fast_attn_only", "mamba_only")

# variant -> (cross-variate encoder, selective mixer); None means the sublayer is removed
VARIANT_PARTS = {
    "full": ("fast", "mamba"),
    "self_attn_plus_mamba": ("self", "mamba"),
    "fast_attn_plus_self_attn": ("fast", "self"),
    "fast_attn_only": ("fast", None),
    "mamba_only": (None, "mamba"),
}

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class FMambaConfig:
    n_vars: int
    lookback: int = 96
    horizon: int = 96
    d_model: int = 512
    e_layers: int = 2
    d_state: int = 2
    k_dim: int = 128
    expansion: int = 2
    d_conv: int = 4
    dropout: float = 0.1
    variant: str = "full"
    d_ff: int | None = None
    chained_residual: bool = False

    def __post_init__(self):
        for name in ("n_vars", "lookback", "horizon", "d_model", "e_layers", "d_state", "k_dim", "expansion", "d_conv"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.variant not in VARIANT_PARTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    @property
    def hidden(self) -> int:
        return self.d_ff or self.d_model

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FMambaConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class FMambaLayer(Module):
    def __init__(self, cfg: FMambaConfig, rng: Rng):
        encoder, mixer = VARIANT_PARTS[cfg.variant]
        D = cfg.d_model
        if encoder == "fast":
            self.attention = FastAttentionParams(D, cfg.k_dim, rng)
        elif encoder == "self":
            self.attention = SelfAttentionParams(D, rng)
        else:
            self.attention = None
        if mixer == "mamba":
            self.mixer = MambaParams(D, cfg.d_state, rng, expand=cfg.expansion, d_conv=cfg.d_conv)
        elif mixer == "self":
            self.mixer = SelfAttentionParams(D, rng)
        else:
            self.mixer = None
        self.ln1 = LayerNorm(D)
        self.ln2 = LayerNorm(D)
        self.ln3 = LayerNorm(D)
        self.mlp = MlpBlock(D, cfg.hidden, D, rng, cfg.dropout)
        self.dropout = cfg.dropout
        self.chained_residual = cfg.chained_residual


def _attend(params, X: Tensor) -> Tensor:
    if isinstance(params, FastAttentionParams):
        return fast_attention_forward(params, X)
    return self_attention_forward(params, X)


def fmamba_layer_forward(layer: FMambaLayer, Xi, rng: Rng | None = None, training: bool = False) -> Tensor:
    """One layer; the second residual is taken from the layer input Xi unless ``chained_residual``.

    A removed sublayer is the identity, with its residual and norm kept.
    """
    Xi = T._as_tensor(Xi)
    if layer.attention is None:
        a = Xi
    else:
        a = dropout_forward(_attend(layer.attention, Xi), layer.dropout, rng, training)
    y1 = layer.ln1(a + Xi)

    if layer.mixer is None:
        m = y1
    elif isinstance(layer.mixer, MambaParams):
        m = mamba_block_forward(layer.mixer, y1)
    else:
        m = dropout_forward(self_attention_forward(layer.mixer, y1), layer.dropout, rng, training)
    y2 = layer.ln2(m + (y1 if layer.chained_residual else Xi))

    return layer.ln3(y2 + layer.mlp(y2, rng, training))


@dataclass
class NormStats:
    mean: np.ndarray  # (B, n)
    std: np.ndarray  # (B, n), floored


def normalize_input(X) -> tuple[np.ndarray, NormStats]:
    """Per-(batch, variate) z-score over the last axis of a (B, n, L) window."""
    x = X.data if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("normalization needs at least 2 time steps")
    mean = x.mean(axis=-1)
    std = np.maximum(x.std(axis=-1), STD_FLOOR)
    return (x - mean[..., None]) / std[..., None], NormStats(mean, std)


def denormalize(y, stats: NormStats) -> Tensor:
    """Inverse of :func:`normalize_input` for a (B, n, tau) output."""
    return T._as_tensor(y) * stats.std[..., None] + stats.mean[..., None]


class FMamba(Module):
    def __init__(self, cfg: FMambaConfig, seed: int = 0):
        self.config = cfg
        rng = Rng(seed)
        self.embedding = MlpBlock(cfg.lookback, cfg.hidden, cfg.d_model, rng, cfg.dropout)
        self.pe = PositionalEncoding(cfg.n_vars, cfg.d_model)
        self.layers = [FMambaLayer(cfg, rng) for _ in range(cfg.e_layers)]
        self.proj_W = uniform_init(rng, (cfg.d_model, cfg.horizon), cfg.d_model)
        self.proj_b = uniform_init(rng, (cfg.horizon,), cfg.d_model)

    def __call__(self, X, rng: Rng | None = None, training: bool = False) -> Tensor:
        return model_forward(self, X, rng, training)

    def predict(self, X) -> np.ndarray:
        return model_forward(self, X, None, False).data


def model_forward(model: FMamba, X, rng: Rng | None = None, training: bool = False) -> Tensor:
    """(B, L, n) history -> (B, tau, n) forecast."""
    cfg = model.config
    x = X.data if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (cfg.lookback, cfg.n_vars):
        raise ValueError(f"expected input (B, {cfg.lookback}, {cfg.n_vars}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    tokens = np.ascontiguousarray(np.swapaxes(x, 1, 2))  # (B, n, L)
    x_norm, stats = normalize_input(tokens)
    h = embed(x_norm, model.embedding, model.pe, rng, training)
    for layer in model.layers:
        h = fmamba_layer_forward(layer, h, rng, training)
    y = h @ model.proj_W + model.proj_b  # (B, n, tau)
    return denormalize(y, stats).permute(0, 2, 1)


def build_variant(config: FMambaConfig, seed: int = 0, variant: str | None = None) -> FMamba:
    if variant is not None:
        config = replace(config, variant=variant)
    return FMamba(config, seed)


def parameter_report(model: FMamba) -> dict[str, int]:
    """Parameter counts per component (layer sublayers are pooled across layers)."""
    counts: dict[str, int] = {}
    for name, p in model.named_parameters():
        parts = name.split(".")
        key = parts[2] if parts[0] == "layers" else parts[0]
        counts[key] = counts.get(key, 0) + p.size
    counts["total"] = model.num_parameters()
    return counts


# Published per-benchmark hyperparameters: (dataset, horizon) -> settings. Variate counts and split sizes per dataset.
DATASETS = {
    "PEMS03": {"n_vars": 358, "split": (15617, 5135, 5135), "granularity": "5min"},
    "PEMS04": {"n_vars": 307, "split": (10172, 3375, 3375), "granularity": "5min"},
    "PEMS07": {"n_vars": 883, "split": (16911, 5622, 5622), "granularity": "5min"},
    "PEMS08": {"n_vars": 170, "split": (10690, 3548, 3548), "granularity": "5min"},
    "Electricity": {"n_vars": 321, "split": (18317, 2633, 5261), "granularity": "1hour"},
    "SML2010": {"n_vars": 22, "split": (2752, 368, 780), "granularity": "15min"},
    "Weather": {"n_vars": 21, "split": (36792, 5271, 10540), "granularity": "10min"},
    "Solar-Energy": {"n_vars": 137, "split": (36601, 5161, 10417), "granularity": "10min"},
}


def _rows(horizons, el, bs, lr, d_model, d_state, k_dim, dropout=0.1):
    out = {}
    for i, h in enumerate(horizons):
        pick = lambda v: v[i] if isinstance(v, (list, tuple)) else v  # noqa: E731
        out[h] = {
            "el": pick(el),
            "bs": pick(bs),
            "lr": pick(lr),
            "d_model": pick(d_model),
            "dropout": pick(dropout),
            "d_state": pick(d_state),
            "k_dim": pick(k_dim),
        }
    return out


_PEMS_H = (12, 24, 48, 96)
_LONG_H = (96, 192, 336, 720)

BENCHMARK_HPARAMS: dict[str, dict[int, dict]] = {
    "PEMS03": _rows(_PEMS_H, 4, 32, 1e-3, 512, 2, 128),
    "PEMS04": _rows(_PEMS_H, 4, 32, 5e-4, 1024, 2, 128),
    "PEMS07": _rows(_PEMS_H, 2, 16, 5e-4, 512, 2, 512),
    "PEMS08": _rows(_PEMS_H, 2, 32, 8e-4, 512, 2, 512),
    "Electricity": _rows(_LONG_H, 3, 16, (8e-4, 1e-3, 1e-3, 1e-3), 512, 16, 512),
    "SML2010": _rows((48, 96, 192, 336), 3, 32, 8e-4, 512, 2, (128, 128, 128, 256)),
    "Weather": _rows(_LONG_H, 3, 16, (5e-5, 5e-5, 7e-5, 7e-5), 512, 2, (512, 256, 128, 128)),
    "Solar-Energy": _rows(_LONG_H, 2, 32, 1e-4, 512, 2, 256),
}


def benchmark_config(dataset: str, horizon: int, lookback: int = 96, **overrides) -> FMambaConfig:
    hp = BENCHMARK_HPARAMS[dataset][horizon]
    kwargs = dict(
        n_vars=DATASETS[dataset]["n_vars"],
        lookback=lookback,
        horizon=horizon,
        d_model=hp["d_model"],
        e_layers=hp["el"],
        d_state=hp["d_state"],
        k_dim=hp["k_dim"],
        dropout=hp["dropout"],
    )
    kwargs.update(overrides)
    return FMambaConfig(**kwargs)
