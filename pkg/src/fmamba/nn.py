"""Embedding-layer building blocks: MLP block, layer norm, positional table, dropout."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Rng, Tensor


class Module:
    """Parameter container.

    Parameters and sub-modules are discovered from instance attributes in
    insertion order, so names are stable across runs (checkpoints rely on it).
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def uniform_init(rng: Rng, shape, fan_in: int) -> Parameter:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    bound = 1.0 / np.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, shape))


class MlpBlock(Module):
    """ReLU(x W1 + b1) W2 + b2 with dropout on the hidden activation."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: Rng, dropout_rate: float = 0.0):
        self.W1 = uniform_init(rng, (d_in, d_hidden), d_in)
        self.b1 = uniform_init(rng, (d_hidden,), d_in)
        self.W2 = uniform_init(rng, (d_hidden, d_out), d_hidden)
        self.b2 = uniform_init(rng, (d_out,), d_hidden)
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {dropout_rate}")
        self.dropout_rate = dropout_rate

    @property
    def d_in(self) -> int:
        return self.W1.shape[0]

    @property
    def d_out(self) -> int:
        return self.W2.shape[1]

    def __call__(self, x, rng: Rng | None = None, training: bool = False) -> Tensor:
        return mlp_block_forward(self, x, rng, training)


def mlp_block_forward(block: MlpBlock, x, rng: Rng | None = None, training: bool = False) -> Tensor:
    x = T._as_tensor(x)
    if x.shape[-1] != block.d_in:
        raise ValueError(f"MLP block expects trailing dim {block.d_in}, got shape {x.shape}")
    hidden = T.relu(x @ block.W1 + block.b1)
    hidden = dropout_forward(hidden, block.dropout_rate, rng, training)
    return hidden @ block.W2 + block.b2


class LayerNorm(Module):
    def __init__(self, d: int, epsilon: float = 1e-5):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.epsilon = epsilon

    def __call__(self, x) -> Tensor:
        return layer_norm_forward(self, x)


def layer_norm_forward(ln: LayerNorm, x) -> Tensor:
    """gain * (x - mean) / sqrt(var + eps) + bias over the trailing axis (population variance)."""
    x = T._as_tensor(x)
    if x.shape[-1] != ln.gain.shape[0]:
        raise ValueError(f"layer norm expects trailing dim {ln.gain.shape[0]}, got shape {x.shape}")
    centered = x - x.mean(axis=-1, keepdims=True)
    var = T.square(centered).mean(axis=-1, keepdims=True)
    inv_std = T.power(var + ln.epsilon, -0.5)
    return centered * inv_std * ln.gain + ln.bias


class PositionalEncoding:
    """Fixed sinusoidal table; not trainable."""

    def __init__(self, max_positions: int, d_model: int):
        self.table = sinusoidal_pe(max_positions, d_model)

    @property
    def max_positions(self) -> int:
        return self.table.shape[0]


def sinusoidal_pe(max_positions: int, d_model: int) -> np.ndarray:
    if d_model % 2:
        raise ValueError(f"d_model must be even for the sinusoidal table, got {d_model}")
    pos = np.arange(max_positions, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, two_i / d_model)
    table = np.empty((max_positions, d_model))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def embed(x, mlp: MlpBlock, pe: PositionalEncoding, rng: Rng | None = None, training: bool = False) -> Tensor:
    """(B, n, L) -> (B, n, d_model): MLP block output plus PE rows indexed by token."""
    x = T._as_tensor(x)
    n = x.shape[-2]
    if n > pe.max_positions:
        raise ValueError(f"{n} tokens exceed the positional table ({pe.max_positions} rows)")
    return mlp_block_forward(mlp, x, rng, training) + pe.table[:n]


def dropout_forward(x, rate: float, rng: Rng | None, training: bool) -> Tensor:
    """Inverted dropout; the exact identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = T._as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an Rng")
    keep = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return x * keep
