"""Reverse-mode differentiation over numpy float64 arrays.

A :class:`Tape` records every primitive applied while it is active. Calling
:meth:`Tape.backward` walks the records in exact reverse order and
accumulates gradients into ``Tensor.grad``.

Only the primitives the model needs are provided. Each primitive checks its
output for NaN/Inf and raises :class:`NumericDomainError` instead of letting
non-finite values propagate.
"""
from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from . import kernels

LAYER_NORM_EPS = 1e-5


class NumericDomainError(ArithmeticError):
    """A primitive produced or received a non-finite value."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; nested tapes are allowed and the innermost one
    records. Tapes are thread-local, so separate model instances may run in
    separate threads.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, output: Tensor, seed: np.ndarray | None = None) -> None:
        """Accumulate d(output)/d(x) into ``x.grad`` for every recorded input."""
        if seed is None:
            if output.data.size != 1:
                raise ValueError("backward from a non-scalar output needs an explicit seed")
            seed = np.ones_like(output.data)
        output.grad = np.asarray(seed, dtype=np.float64)
        for out, inputs, backward in reversed(self.records):
            g = out.grad
            if g is None:
                continue
            grads = backward(g)
            for t, gi in zip(inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                t.grad = gi if t.grad is None else t.grad + gi
        # Intermediate gradients are only needed during the sweep.
        for out, _, _ in self.records:
            if out is not output:
                out.grad = None


_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply_op(value: np.ndarray, inputs: Sequence[Tensor], backward: Callable, op: str = "op") -> Tensor:
    """Wrap ``value`` as the output of a primitive and record it on the active tape.

    ``backward`` maps the output gradient to a tuple with one entry per input
    (``None`` for inputs that need no gradient).
    """
    if not np.all(np.isfinite(value)):
        raise NumericDomainError(f"{op} produced a non-finite value")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs:
        tape = current_tape()
        if tape is not None:
            tape.records.append((out, tuple(inputs), backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_input(t: Tensor, op: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericDomainError(f"{op} received a non-finite value")


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return apply_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return apply_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return apply_op(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return apply_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return apply_op(y, (a,), lambda g: (g * y,), "exp")


def reciprocal(a: Tensor) -> Tensor:
    y = 1.0 / a.data
    return apply_op(y, (a,), lambda g: (-g * y * y,), "reciprocal")


def absolute(a: Tensor) -> Tensor:
    s = np.sign(a.data)
    return apply_op(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def silu(a: Tensor) -> Tensor:
    x = a.data
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return apply_op(x * sig, (a,), lambda g: (g * (sig * (1.0 + x * (1.0 - sig))),), "silu")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return apply_op(np.logaddexp(0.0, x), (a,), lambda g: (g * sig,), "softplus")


def gelu(a: Tensor) -> Tensor:
    x = a.data
    c = math.sqrt(2.0 / math.pi)
    u = c * (x + 0.044715 * x**3)
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)
    dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3 * 0.044715 * x * x)
    return apply_op(y, (a,), lambda g: (g * dy,), "gelu")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return apply_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "silu": silu,
    "softplus": softplus,
    "gelu": gelu,
    "relu": relu,
}


def activation(a: Tensor, kind: str = "silu") -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}") from None
    return fn(a)


# --- linear algebra and reshaping -----------------------------------------

def matmul(a, b) -> Tensor:
    """``a @ b`` for operands with at least two dimensions (batch dims broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul operands need at least two dimensions")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return apply_op(ad @ bd, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    return apply_op(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def permute_axes(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return apply_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "permute_axes")


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    return apply_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return apply_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return apply_op(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / n)


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing; the backward pass scatters into a zero array."""
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return apply_op(np.array(a.data[index]), (a,), backward, "take")


def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """``table[index]`` along the first axis; backward scatter-adds rows."""
    index = np.asarray(index, dtype=np.int64)
    n = table.shape[0]
    tail = table.shape[1:]

    def backward(g):
        flat = g.reshape(len(index), int(np.prod(tail)))
        return (kernels.scatter_add_rows(flat, index, n).reshape((n,) + tail),)

    return apply_op(table.data[index], (table,), backward, "gather_rows")


def scatter_add_rows(values: Tensor, index: np.ndarray, n: int) -> Tensor:
    """Row ``e`` of ``values`` is added into output row ``index[e]`` (node index order)."""
    index = np.asarray(index, dtype=np.int64)
    tail = values.shape[1:]
    flat = values.data.reshape(values.shape[0], int(np.prod(tail)))
    out = kernels.scatter_add_rows(flat, index, n).reshape((n,) + tail)
    return apply_op(out, (values,), lambda g: (g[index],), "scatter_add_rows")


# --- fused primitives -------------------------------------------------------

def softmax_rows(m: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.

    ``mask`` (boolean, broadcastable) marks entries that take part; masked-out
    entries get weight exactly 0.
    """
    _check_input(m, "softmax_rows")
    x = m.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return apply_op(y, (m,), backward, "softmax_rows")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    gd = gain.data
    y = xhat * gd + bias.data

    def backward(g):
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, _unbroadcast(g * xhat, gd.shape), _unbroadcast(g, bias.shape)

    return apply_op(y, (x, gain, bias), backward, "layer_norm")


def pairwise_sqdist(a: Tensor, b: Tensor) -> Tensor:
    """``out[i, j] = ||a_i - b_j||^2`` for 2-D ``a`` (N x d) and ``b`` (M x d)."""
    ad, bd = a.data, b.data
    out = kernels.pairwise_sqdist(ad, bd)

    def backward(g):
        # d/da_i = 2 sum_j g_ij (a_i - b_j); d/db_j = -2 sum_i g_ij (a_i - b_j)
        row = g.sum(axis=1, keepdims=True)
        col = g.sum(axis=0)[:, None]
        ga = 2.0 * (row * ad - g @ bd)
        gb = 2.0 * (col * bd - g.T @ ad)
        return ga, gb

    return apply_op(out, (a, b), backward, "pairwise_sqdist")


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy on logits, computed stably."""
    z = logits.data
    t = np.asarray(targets, dtype=np.float64)
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return apply_op(loss, (logits,), lambda g: (g * (sig - t),), "bce_with_logits")
