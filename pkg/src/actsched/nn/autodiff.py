"""Tape-based reverse-mode differentiation over numpy arrays.

Ops compute values eagerly and, when a tape is active, append a backward
closure to it. Replaying the tape in reverse accumulates gradients into
`Tensor.grad`. With no active tape the same ops run as plain numpy, so
inference pays no graph cost.

Gradient accumulation is always out-of-place and closures never mutate the
arrays handed to them, so a gradient may alias another tensor's buffer safely.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import backend

_ACTIVE = None


class Tape:
    __slots__ = ("ops",)

    def __init__(self):
        self.ops = []

    def backward(self, root: "Tensor") -> None:
        root.grad = np.ones_like(root.value)
        for fn in reversed(self.ops):
            fn()


@contextmanager
def record():
    global _ACTIVE
    prev, tape = _ACTIVE, Tape()
    _ACTIVE = tape
    try:
        yield tape
    finally:
        _ACTIVE = prev


def _rec(fn) -> None:
    if _ACTIVE is not None:
        _ACTIVE.ops.append(fn)


class Tensor:
    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def _acc(self, g) -> None:
        self.grad = g if self.grad is None else self.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value @ b.value)

    def back():
        if out.grad is None:
            return
        a._acc(out.grad @ b.value.T)
        b._acc(a.value.T @ out.grad)

    _rec(back)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value + b.value)

    def back():
        if out.grad is None:
            return
        a._acc(_unbroadcast(out.grad, a.value.shape))
        b._acc(_unbroadcast(out.grad, b.value.shape))

    _rec(back)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value - b.value)

    def back():
        if out.grad is None:
            return
        a._acc(_unbroadcast(out.grad, a.value.shape))
        b._acc(_unbroadcast(-out.grad, b.value.shape))

    _rec(back)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value * b.value)

    def back():
        if out.grad is None:
            return
        a._acc(_unbroadcast(out.grad * b.value, a.value.shape))
        b._acc(_unbroadcast(out.grad * a.value, b.value.shape))

    _rec(back)
    return out


def mul_const(a: Tensor, k) -> Tensor:
    """Multiply by a constant scalar or array; no gradient into the constant."""
    out = Tensor(a.value * k)

    def back():
        if out.grad is None:
            return
        a._acc(_unbroadcast(out.grad * k, a.value.shape))

    _rec(back)
    return out


def add_const(a: Tensor, k) -> Tensor:
    out = Tensor(a.value + k)

    def back():
        if out.grad is None:
            return
        a._acc(_unbroadcast(out.grad, a.value.shape))

    _rec(back)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.value))
    out = Tensor(s)

    def back():
        if out.grad is None:
            return
        a._acc(out.grad * s * (1.0 - s))

    _rec(back)
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)
    out = Tensor(t)

    def back():
        if out.grad is None:
            return
        a._acc(out.grad * (1.0 - t * t))

    _rec(back)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.value, 0))

    def back():
        if out.grad is None:
            return
        a._acc(out.grad * (a.value > 0))

    _rec(back)
    return out


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.value)
    out = Tensor(e)

    def back():
        if out.grad is None:
            return
        a._acc(out.grad * e)

    _rec(back)
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.value * a.value)

    def back():
        if out.grad is None:
            return
        a._acc(out.grad * (2.0 * a.value))

    _rec(back)
    return out


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.value.sum(axis=axis, keepdims=keepdims))

    def back():
        if out.grad is None:
            return
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._acc(np.broadcast_to(g, a.value.shape))

    _rec(back)
    return out


def mean_(a: Tensor, axis=None) -> Tensor:
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul_const(sum_(a, axis=axis), 1.0 / n)


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    out = Tensor(np.concatenate([p.value for p in parts], axis=axis))
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back():
        if out.grad is None:
            return
        for p, lo, hi in zip(parts, offsets, offsets[1:]):
            idx = [slice(None)] * out.grad.ndim
            idx[axis] = slice(lo, hi)
            p._acc(out.grad[tuple(idx)])

    _rec(back)
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.value[:, start:stop])

    def back():
        if out.grad is None:
            return
        g = np.zeros_like(a.value)
        g[:, start:stop] = out.grad
        a._acc(g)

    _rec(back)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.value.reshape(shape))

    def back():
        if out.grad is None:
            return
        a._acc(out.grad.reshape(a.value.shape))

    _rec(back)
    return out


def embedding(table: Tensor, tokens: np.ndarray) -> Tensor:
    out = Tensor(table.value[tokens])

    def back():
        if out.grad is None:
            return
        g = np.zeros_like(table.value)
        np.add.at(g, tokens, out.grad)
        table._acc(g)

    _rec(back)
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; caller gates on training mode."""
    if rate <= 0.0:
        return a
    keep = (rng.random(a.value.shape) >= rate) / np.asarray(1.0 - rate, a.dtype)
    return mul_const(a, keep.astype(a.dtype))


def lstm_gates(gates: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """Fused LSTM gate nonlinearity: (B, 4S) preactivations -> new (h, c)."""
    h_val, c_val, i, f, g, o, tc = backend.lstm_gates_forward(gates.value, c_prev.value)
    h, c = Tensor(h_val), Tensor(c_val)

    def back():
        if h.grad is None and c.grad is None:
            return
        dh = h.grad if h.grad is not None else np.zeros_like(h.value)
        dc = c.grad if c.grad is not None else np.zeros_like(c.value)
        dgates, dc_prev = backend.lstm_gates_backward(
            dh, dc, i, f, g, o, c_prev.value, tc
        )
        gates._acc(dgates)
        c_prev._acc(dc_prev)

    _rec(back)
    return h, c


def softmax_ce(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row negative log-likelihood of integer targets, numerically stable."""
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(denom)
    rows = np.arange(logits.value.shape[0])
    out = Tensor(-logp[rows, targets])

    def back():
        if out.grad is None:
            return
        g = ez / denom
        g[rows, targets] -= 1.0
        logits._acc(g * out.grad[:, None])

    _rec(back)
    return out


def logmeanexp(a: Tensor) -> Tensor:
    """log(mean(exp(a))) over a 1-D tensor, stable for large scores."""
    m = a.value.max()
    w = np.exp(a.value - m)
    out = Tensor(np.asarray(m + np.log(w.mean()), dtype=a.dtype))

    def back():
        if out.grad is None:
            return
        a._acc(out.grad * (w / w.sum()))

    _rec(back)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain numpy softmax for generation-time probabilities."""
    z = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)
