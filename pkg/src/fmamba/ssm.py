"""
Selective state space block.

Shapes follow the block's own naming: B batch, V tokens (variates), E expanded
width, N state size. The recurrence per channel e and state slot n is::

    h[k] = Abar[k] * h[k-1] + Bbar[k] * x[k]
    y[k] = sum_n C[k, n] * h[k]

Abar and Bbar come from exact zero-order-hold discretization of a diagonal,
strictly negative A with an input-dependent step size delta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Module, uniform_init
from .tensor import Rng, Tensor, _emit

# below this |delta * A| the exact B-bar factor is replaced by its series limit
SERIES_THRESHOLD = 1e-8


class MambaParams(Module):
    """Weights of one selective SSM block.

    ``A_log`` stores log(-A); the realized state matrix is ``-exp(A_log)``, so
    A stays strictly negative under any update. A is initialized to -(n+1)
    along the state axis, and ``delta_bias`` so that softplus(delta_bias) is
    uniform on [dt_min, dt_max] per channel.
    """

    def __init__(
        self,
        d_model: int,
        d_state: int,
        rng: Rng,
        expand: int = 2,
        d_conv: int = 4,
        dt_min: float = 1e-3,
        dt_max: float = 1e-1,
    ):
        E = expand * d_model
        self.Wx = uniform_init(rng, (d_model, E), d_model)
        self.Wz = uniform_init(rng, (d_model, E), d_model)
        self.conv_kernel = uniform_init(rng, (E, d_conv), d_conv)
        self.A_log = T.Parameter(np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (E, 1))))
        self.WB = uniform_init(rng, (E, d_state), E)
        self.WC = uniform_init(rng, (E, d_state), E)
        self.W_delta = uniform_init(rng, (E, 1), E)
        dt = rng.uniform(dt_min, dt_max, (E,))
        self.delta_bias = T.Parameter(dt + np.log(-np.expm1(-dt)))  # inverse softplus
        self.Wout = uniform_init(rng, (E, d_model), E)

    @property
    def d_model(self) -> int:
        return self.Wx.shape[0]

    @property
    def expanded(self) -> int:
        return self.Wx.shape[1]

    @property
    def d_state(self) -> int:
        return self.A_log.shape[1]

    @property
    def A(self) -> np.ndarray:
        return -np.exp(self.A_log.data)

    def __call__(self, X, scan: str = "sequential") -> Tensor:
        return mamba_block_forward(self, X, scan=scan)


@dataclass
class DiscretizedSystem:
    A_bar: Tensor  # (B, V, E, N)
    B_bar: Tensor  # (B, V, E, N)


# ---------------------------------------------------------------------------
# depthwise causal convolution


def causal_depthwise_conv1d(x, kernel) -> Tensor:
    """y[:, t, e] = sum_j kernel[e, j] * x[:, t - j, e], zero-padded on the left."""
    x, kernel = T._as_tensor(x), T._as_tensor(kernel)
    if kernel.ndim != 2 or kernel.shape[0] != x.shape[-1]:
        raise ValueError(f"kernel shape {kernel.shape} does not match channels of {x.shape}")
    xd, kd = x.data, kernel.data
    V, K = xd.shape[-2], kd.shape[1]
    out = xd * kd[:, 0]
    for j in range(1, min(K, V)):
        out[..., j:, :] += xd[..., :-j, :] * kd[:, j]

    def adjoint(g):
        gx = g * kd[:, 0]
        gk = np.zeros_like(kd)
        gk[:, 0] = (g * xd).reshape(-1, xd.shape[-1]).sum(axis=0)
        for j in range(1, min(K, V)):
            gx[..., :-j, :] += g[..., j:, :] * kd[:, j]
            gk[:, j] = (g[..., j:, :] * xd[..., :-j, :]).reshape(-1, xd.shape[-1]).sum(axis=0)
        return gx, gk

    return _emit(out, (x, kernel), adjoint)


# ---------------------------------------------------------------------------
# zero-order-hold discretization


def _bbar_factor(delta: np.ndarray, A: np.ndarray, u: np.ndarray, em1: np.ndarray) -> np.ndarray:
    """expm1(delta*A)/A, switching to its limit delta where delta*A underflows the ratio."""
    small = np.abs(u) < SERIES_THRESHOLD
    if not small.any():
        return em1 / A
    d = np.broadcast_to(delta[..., None], u.shape)
    return np.where(small, d, em1 / np.where(small, -1.0, A))


def _bbar_derivatives(delta, A, u, e, em1) -> tuple[np.ndarray, np.ndarray]:
    """Partials of expm1(delta*A)/A with respect to delta and A, given e = exp(u), em1 = expm1(u)."""
    # (u e^u - expm1(u)) / A^2 cancels badly for small u; switch to its series
    near = np.abs(u) < 1e-4
    exact = (u * e - em1) / (A * A)
    if not near.any():
        return e, exact
    d = delta[..., None]
    series = d * d * (0.5 + u / 3.0 + u * u / 8.0)
    return e, np.where(near, series, exact)


def discretize(delta, A, Bmat) -> DiscretizedSystem:
    """Exact ZOH for diagonal A.

    ``delta`` (B, V, E), ``A`` (E, N), ``Bmat`` (B, V, N). Returns
    A_bar = exp(delta*A) and B_bar = (exp(delta*A) - 1)/A * Bmat, both (B, V, E, N).
    """
    delta, A, Bmat = T._as_tensor(delta), T._as_tensor(A), T._as_tensor(Bmat)
    dd, ad, bd = delta.data, A.data, Bmat.data
    if np.any(dd <= 0):
        raise ValueError("discretization step delta must be positive")
    if np.any(ad >= 0):
        raise ValueError("state matrix A must be strictly negative")
    if dd.shape[-1] != ad.shape[0] or bd.shape[-1] != ad.shape[1] or dd.shape[:-1] != bd.shape[:-1]:
        raise ValueError(f"discretize shape mismatch: delta {dd.shape}, A {ad.shape}, B {bd.shape}")

    u = dd[..., None] * ad
    em1 = np.expm1(u)
    a_bar = em1 + 1.0
    batch_axes = tuple(range(dd.ndim - 1))

    def a_adjoint(g):
        ga = g * a_bar
        return (ga * ad).sum(axis=-1), (ga * dd[..., None]).sum(axis=batch_axes)

    A_bar = _emit(a_bar, (delta, A), a_adjoint)

    factor = _bbar_factor(dd, ad, u, em1)
    b_exp = bd[..., None, :]
    b_bar = factor * b_exp

    def b_adjoint(g):
        f_delta, f_A = _bbar_derivatives(dd, ad, u, a_bar, em1)
        gb = g * b_exp
        return (
            (gb * f_delta).sum(axis=-1),
            (gb * f_A).sum(axis=batch_axes),
            (g * factor).sum(axis=-2),
        )

    B_bar = _emit(b_bar, (delta, A, Bmat), b_adjoint)
    return DiscretizedSystem(A_bar, B_bar)


# ---------------------------------------------------------------------------
# linear recurrence scans


def linear_scan_sequential(a: np.ndarray, b: np.ndarray, axis: int = 1) -> np.ndarray:
    """h[k] = a[k] * h[k-1] + b[k] with h[-1] = 0, stepping along ``axis``."""
    a = np.moveaxis(a, axis, 0)
    b = np.moveaxis(b, axis, 0)
    h = np.empty_like(b)
    state = np.zeros_like(b[0])
    for k in range(b.shape[0]):
        state = a[k] * state + b[k]
        h[k] = state
    return np.moveaxis(h, 0, axis)


def linear_scan_parallel(a: np.ndarray, b: np.ndarray, axis: int = 1) -> np.ndarray:
    """Hillis-Steele inclusive scan with (a2, b2) o (a1, b1) = (a2 a1, a2 b1 + b2).

    log2(V) vectorized rounds; each round combines every element with the one
    ``shift`` positions earlier.
    """
    a = np.moveaxis(a, axis, 0).copy()
    b = np.moveaxis(b, axis, 0).copy()
    V = b.shape[0]
    shift = 1
    while shift < V:
        b[shift:] = a[shift:] * b[:-shift] + b[shift:]
        a[shift:] = a[shift:] * a[:-shift]
        shift *= 2
    return np.moveaxis(b, 0, axis)


_SCANS = {"sequential": linear_scan_sequential, "parallel": linear_scan_parallel}


def _reverse_scan(a_next: np.ndarray, u: np.ndarray, method: str) -> np.ndarray:
    """g[k] = a_next[k] * g[k+1] + u[k], run backwards along axis 1."""
    flipped = _SCANS[method](a_next[:, ::-1], u[:, ::-1], axis=1)
    return flipped[:, ::-1]


def selective_scan(sys: DiscretizedSystem, x, C, method: str = "sequential") -> Tensor:
    """Run the selective recurrence; ``method`` only changes the forward/backward scan kernel.

    The token loop is the default: on one core its O(V) work beats the
    O(V log V) work of the prefix scan at every size measured.

    x (B, V, E), C (B, V, N) -> y (B, V, E).
    """
    if method not in _SCANS:
        raise ValueError(f"unknown scan method {method!r}")
    A_bar, B_bar = sys.A_bar, sys.B_bar
    x, C = T._as_tensor(x), T._as_tensor(C)
    ab, bb, xd, cd = A_bar.data, B_bar.data, x.data, C.data
    if ab.shape != bb.shape or ab.shape[:-1] != xd.shape or cd.shape != ab.shape[:2] + ab.shape[-1:]:
        raise ValueError(f"scan shape mismatch: A_bar {ab.shape}, x {xd.shape}, C {cd.shape}")

    h = _SCANS[method](ab, bb * xd[..., None], axis=1)  # (B, V, E, N)
    y = np.einsum("bven,bvn->bve", h, cd)

    def adjoint(g):
        u = g[..., None] * cd[:, :, None, :]
        a_next = np.zeros_like(ab)
        a_next[:, :-1] = ab[:, 1:]
        gh = _reverse_scan(a_next, u, method)
        h_prev = np.zeros_like(h)
        h_prev[:, 1:] = h[:, :-1]
        g_abar = gh * h_prev
        g_bbar = gh * xd[..., None]
        g_x = (gh * bb).sum(axis=-1)
        g_c = np.einsum("bve,bven->bvn", g, h)
        return g_abar, g_bbar, g_x, g_c

    return _emit(y, (A_bar, B_bar, x, C), adjoint)


def selective_scan_sequential(sys: DiscretizedSystem, x, C) -> Tensor:
    return selective_scan(sys, x, C, method="sequential")


def selective_scan_parallel(sys: DiscretizedSystem, x, C) -> Tensor:
    return selective_scan(sys, x, C, method="parallel")


# ---------------------------------------------------------------------------
# full block


def mamba_block_forward(p: MambaParams, X, scan: str = "sequential") -> Tensor:
    X = T._as_tensor(X)
    if X.ndim != 3 or X.shape[-1] != p.d_model:
        raise ValueError(f"Mamba block expects (B, V, {p.d_model}) input, got shape {X.shape}")
    x = X @ p.Wx
    z = X @ p.Wz
    xc = T.silu(causal_depthwise_conv1d(x, p.conv_kernel))
    Bmat = xc @ p.WB
    C = xc @ p.WC
    delta = T.softplus(xc @ p.W_delta + p.delta_bias)  # (B,V,1) broadcast onto E
    A = T.negate(T.exp(p.A_log))
    sys = discretize(delta, A, Bmat)
    y = selective_scan(sys, xc, C, method=scan)
    return (y * T.silu(z)) @ p.Wout
