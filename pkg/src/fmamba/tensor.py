"""
Dense float64 tensors with a reverse-mode tape.

Every differentiable operation in the package is built from the primitives in
this module. A :class:`Tape` records operations while it is active (``with
Tape() as tape:``); outside a tape, operations run eagerly with no recording
overhead, which is how evaluation and benchmarking use them.

Gradients flow into :class:`Parameter` leaves only. Intermediate tensors carry
a ``requires_grad`` flag so that branches that cannot reach a parameter are
never recorded.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "Rng",
    "matmul",
    "map_unary",
    "reduce",
    "backward",
    "finite_difference_gradient",
    "relative_error",
]


class Tensor:
    """Immutable dense array of 64-bit floats."""

    __slots__ = ("data", "requires_grad", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if any(s <= 0 for s in arr.shape):
            raise ValueError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = object.__new__(Tensor)
        t.data = arr
        t.requires_grad = False
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={np.array2string(self.data, precision=5, threshold=12)})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return map_unary(self, "negate")

    def __pow__(self, p):
        return map_unary(self, "power", float(p))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce(self, "sum", axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce(self, "mean", axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return permute(self, tuple(axes))


class Parameter(Tensor):
    """Trainable leaf tensor with a gradient accumulator of the same shape."""

    __slots__ = ("_grad",)

    def __init__(self, data):
        super().__init__(data, requires_grad=True)
        self._grad = None

    @property
    def grad(self) -> np.ndarray:
        # allocated on first use so that building large models stays cheap
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray) -> None:
        self._grad = value

    def zero_grad(self) -> None:
        self._grad = None

    def assign(self, values) -> None:
        """Overwrite the value in place (optimizer steps, checkpoint loads)."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise ValueError(f"cannot assign shape {arr.shape} to parameter of shape {self.data.shape}")
        self.data = arr.copy()

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape})"


# ---------------------------------------------------------------------------
# tape


class _Node:
    __slots__ = ("inputs", "output", "adjoint")

    def __init__(self, inputs, output, adjoint):
        self.inputs = inputs
        self.output = output
        self.adjoint = adjoint


class Tape:
    """Ordered record of operations for one forward/backward pass.

    Nodes are appended in execution order, so the list is topologically sorted
    by construction. Tapes nest; the innermost active tape records.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, inputs: Sequence[Tensor], output: Tensor, adjoint: Callable) -> None:
        self.nodes.append(_Node(tuple(inputs), output, adjoint))
        self._outputs.add(id(output))

    def reset(self) -> None:
        self.nodes.clear()
        self._outputs.clear()

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._outputs


_local = threading.local()


def _stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


def _emit(out: np.ndarray, inputs: Sequence[Tensor], adjoint: Callable) -> Tensor:
    """Wrap a forward result and record it when any input is differentiable.

    ``adjoint(g)`` maps the output gradient to one gradient per input (or None).
    """
    result = Tensor._wrap(out)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.record(inputs, result, adjoint)
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise binary ops (numpy broadcasting)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return _emit(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


# ---------------------------------------------------------------------------
# matmul


def matmul(a, b) -> Tensor:
    """Batched matrix product over the trailing two axes.

    A 1-d right operand is not accepted; use a ``(k, 1)`` matrix instead so the
    adjoints stay uniform.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ValueError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def adjoint(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _emit(ad @ bd, (a, b), adjoint)


# ---------------------------------------------------------------------------
# unary maps


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a nonpositive argument only, so no overflow for either sign
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _silu_grad(x, y):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


# name -> (forward(x, c), derivative(x, y, c))
_UNARY: dict[str, tuple[Callable, Callable]] = {
    "relu": (lambda x, c: np.maximum(x, 0.0), lambda x, y, c: (x > 0).astype(np.float64)),
    "silu": (lambda x, c: x * _sigmoid(x), lambda x, y, c: _silu_grad(x, y)),
    "sigmoid": (lambda x, c: _sigmoid(x), lambda x, y, c: y * (1.0 - y)),
    "softplus": (lambda x, c: _softplus(x), lambda x, y, c: _sigmoid(x)),
    "exp": (lambda x, c: np.exp(x), lambda x, y, c: y),
    "expm1": (lambda x, c: np.expm1(x), lambda x, y, c: y + 1.0),
    "log": (lambda x, c: np.log(x), lambda x, y, c: 1.0 / x),
    "gaussian_half": (lambda x, c: np.exp(-0.5 * x * x), lambda x, y, c: -x * y),
    "negate": (lambda x, c: -x, lambda x, y, c: -np.ones_like(x)),
    "scale": (lambda x, c: c * x, lambda x, y, c: np.full_like(x, c)),
    "square": (lambda x, c: x * x, lambda x, y, c: 2.0 * x),
    "power": (lambda x, c: np.power(x, c), lambda x, y, c: c * np.power(x, c - 1.0)),
}


def map_unary(x, f: str, c: float | None = None) -> Tensor:
    """Apply a registered scalar map elementwise.

    ``scale`` and ``power`` take their constant through ``c``.
    """
    if f not in _UNARY:
        raise ValueError(f"unknown unary map {f!r}; expected one of {sorted(_UNARY)}")
    if f in ("scale", "power") and c is None:
        raise ValueError(f"{f} needs a constant c")
    x = _as_tensor(x)
    fwd, deriv = _UNARY[f]
    xd = x.data
    y = fwd(xd, c)
    return _emit(y, (x,), lambda g: (g * deriv(xd, y, c),))


def relu(x) -> Tensor:
    return map_unary(x, "relu")


def silu(x) -> Tensor:
    return map_unary(x, "silu")


def sigmoid(x) -> Tensor:
    return map_unary(x, "sigmoid")


def softplus(x) -> Tensor:
    return map_unary(x, "softplus")


def exp(x) -> Tensor:
    return map_unary(x, "exp")


def gaussian_half(x) -> Tensor:
    return map_unary(x, "gaussian_half")


def negate(x) -> Tensor:
    return map_unary(x, "negate")


def scale(x, c: float) -> Tensor:
    return map_unary(x, "scale", float(c))


def square(x) -> Tensor:
    return map_unary(x, "square")


def power(x, p: float) -> Tensor:
    return map_unary(x, "power", float(p))


# ---------------------------------------------------------------------------
# reductions and layout


def _normalize_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise ValueError(f"axis {a} out of range for rank {ndim}")
        out.append(a % ndim)
    return tuple(sorted(out))


def reduce(x, kind: str, axis=None, keepdims: bool = False) -> Tensor:
    """Sum or mean over ``axis`` (an int, a tuple, or None for all axes)."""
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {kind!r}")
    x = _as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)
    count = x.size if axes is None else int(np.prod([shape[a] for a in axes]))
    if kind == "mean":
        out = out / count
    factor = 1.0 if kind == "sum" else 1.0 / count

    def adjoint(g):
        if not keepdims:
            g = np.expand_dims(g, axes if axes is not None else tuple(range(len(shape))))
        return (np.broadcast_to(g * factor, shape).copy(),)

    return _emit(np.asarray(out, dtype=np.float64), (x,), adjoint)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def permute(x, axes) -> Tensor:
    """Reorder axes; the result is a contiguous copy."""
    x = _as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ValueError(f"invalid permutation {axes} for rank {x.ndim}")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    return _emit(out, (x,), lambda g: (np.transpose(g, inverse),))


def stop_gradient(x) -> Tensor:
    return Tensor._wrap(_as_tensor(x).data)


# ---------------------------------------------------------------------------
# backward pass and oracle


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(parameter) into every reachable Parameter.grad.

    The tape is consumed: it is reset after the sweep.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss not in tape:
        raise ValueError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.adjoint(g)):
            if gi is None or not inp.requires_grad:
                continue
            if isinstance(inp, Parameter):
                inp.grad = inp.grad + gi
            else:
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
    tape.reset()


def finite_difference_gradient(f: Callable[[], object], p: Parameter, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar ``f()`` with respect to ``p``.

    ``p`` is perturbed in place one element at a time and restored afterwards.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    base = p.data.copy()
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        bumped = base.copy().reshape(-1)
        bumped[i] += h
        p.data = bumped.reshape(base.shape)
        f_plus = _scalar(f())
        bumped[i] -= 2.0 * h
        p.data = bumped.reshape(base.shape)
        f_minus = _scalar(f())
        flat[i] = (f_plus - f_minus) / (2.0 * h)
    p.data = base
    return grad


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


# ---------------------------------------------------------------------------
# random numbers


class Rng:
    """Seeded PCG64 stream (numpy's ``Generator(PCG64(seed))``).

    PCG64 and the distribution methods used here are stable across platforms
    and numpy releases, so a seed pins the stream bit-for-bit.
    """

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(loc, scale, size=shape)

    def random(self, shape) -> np.ndarray:
        return self._gen.random(size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, size=shape)

    def child(self, key: int) -> "Rng":
        """Independent stream derived from this seed and ``key``."""
        ss = np.random.SeedSequence([self.seed, int(key)])
        return Rng(int(ss.generate_state(1, dtype=np.uint64)[0]))
