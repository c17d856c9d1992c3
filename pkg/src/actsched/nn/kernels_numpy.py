"""Reference numpy implementations of the hot elementwise kernels.

Gate order within the 4S preactivation block is (input, forget, cell, output).
Both backends must implement the same signatures; results agree to float
rounding but are not bit-identical across backends.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def _sigmoid(x):
    out = np.empty_like(x)
    np.negative(x, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def lstm_gates_forward(gates, c_prev):
    """gates (B, 4S) preactivations, c_prev (B, S) -> h, c, i, f, g, o, tc."""
    S = c_prev.shape[1]
    i = _sigmoid(gates[:, :S])
    f = _sigmoid(gates[:, S : 2 * S])
    g = np.tanh(gates[:, 2 * S : 3 * S])
    o = _sigmoid(gates[:, 3 * S :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, i, f, g, o, tc


def lstm_gates_backward(dh, dc_in, i, f, g, o, c_prev, tc):
    """Gradients of (h, c) back to the preactivations and previous memory."""
    dc = dc_in + dh * o * (1.0 - tc * tc)
    dgates = np.empty((dh.shape[0], 4 * dh.shape[1]), dtype=dh.dtype)
    S = dh.shape[1]
    dgates[:, :S] = dc * g * i * (1.0 - i)
    dgates[:, S : 2 * S] = dc * c_prev * f * (1.0 - f)
    dgates[:, 2 * S : 3 * S] = dc * i * (1.0 - g * g)
    dgates[:, 3 * S :] = dh * tc * o * (1.0 - o)
    dc_prev = dc * f
    return dgates, dc_prev


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """In-place Adam step on flat views; t is the 1-based step count."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
