"""
Gaussian-kernel fast attention and scaled dot-product self-attention.

Fast attention maps queries and keys through a learned projection followed by
the Gaussian feature map exp(-x^2/2), then contracts keys with values first::

    out = (Q' / k_dim) @ (K'^T @ V')

which costs O(n * k_dim * d_model) instead of O(n^2 * d_model). There is no
softmax and no row normalizer other than the 1/k_dim factor.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Module, uniform_init
from .tensor import Rng, Tensor


class FastAttentionParams(Module):
    def __init__(self, d_model: int, k_dim: int, rng: Rng):
        if k_dim < 1:
            raise ValueError(f"k_dim must be >= 1, got {k_dim}")
        self.Wq = uniform_init(rng, (d_model, k_dim), d_model)
        self.Wk = uniform_init(rng, (d_model, k_dim), d_model)
        self.Wv = uniform_init(rng, (d_model, d_model), d_model)

    @property
    def d_model(self) -> int:
        return self.Wq.shape[0]

    @property
    def k_dim(self) -> int:
        return self.Wq.shape[1]

    def __call__(self, X) -> Tensor:
        return fast_attention_forward(self, X)


class SelfAttentionParams(Module):
    """Single-head attention with square projections (d_k = d_model)."""

    def __init__(self, d_model: int, rng: Rng):
        self.Wq = uniform_init(rng, (d_model, d_model), d_model)
        self.Wk = uniform_init(rng, (d_model, d_model), d_model)
        self.Wv = uniform_init(rng, (d_model, d_model), d_model)

    @property
    def d_model(self) -> int:
        return self.Wq.shape[0]

    def __call__(self, X) -> Tensor:
        return self_attention_forward(self, X)


def gaussian_feature_map(x) -> Tensor:
    return T.gaussian_half(x)


def _check(X: Tensor, d_model: int) -> None:
    if X.ndim < 2 or X.shape[-1] != d_model:
        raise ValueError(f"attention expects (..., n, {d_model}) input, got shape {X.shape}")


def fast_attention_forward(p: FastAttentionParams, X) -> Tensor:
    X = T._as_tensor(X)
    _check(X, p.d_model)
    q = gaussian_feature_map(X @ p.Wq)
    k = gaussian_feature_map(X @ p.Wk)
    v = X @ p.Wv
    kv = k.swapaxes(-1, -2) @ v  # (.., k_dim, d_model): the only token contraction
    return T.scale(q, 1.0 / p.k_dim) @ kv


def fast_attention_oracle(p: FastAttentionParams, X) -> np.ndarray:
    """Quadratic-order evaluation in plain numpy: materializes Q' K'^T first."""
    x = X.data if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
    q = np.exp(-0.5 * (x @ p.Wq.data) ** 2)
    k = np.exp(-0.5 * (x @ p.Wk.data) ** 2)
    v = x @ p.Wv.data
    scores = q @ np.swapaxes(k, -1, -2)  # (.., n, n)
    return (scores @ v) / p.k_dim


def softmax_weights(q, k) -> Tensor:
    """Row-softmax of q k^T / sqrt(d_k), d_k = q.shape[-1]."""
    q, k = T._as_tensor(q), T._as_tensor(k)
    logits = T.scale(q @ k.swapaxes(-1, -2), 1.0 / np.sqrt(q.shape[-1]))
    # the row max is a constant shift; softmax is invariant to it
    shifted = logits - logits.data.max(axis=-1, keepdims=True)
    e = T.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def scaled_dot_product_attention(q, k, v) -> Tensor:
    return softmax_weights(q, k) @ T._as_tensor(v)


def attention_weights(p: SelfAttentionParams, X) -> Tensor:
    X = T._as_tensor(X)
    _check(X, p.d_model)
    return softmax_weights(X @ p.Wq, X @ p.Wk)


def self_attention_forward(p: SelfAttentionParams, X) -> Tensor:
    X = T._as_tensor(X)
    _check(X, p.d_model)
    return scaled_dot_product_attention(X @ p.Wq, X @ p.Wk, X @ p.Wv)
