"""Numba-compiled twins of the numpy kernels.

Importing this module raises ImportError when numba is missing; the backend
module falls back to the numpy implementations. No parallel=True anywhere:
reductions must stay deterministic for a fixed backend.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def lstm_gates_forward(gates, c_prev):
    B, S = c_prev.shape
    h = np.empty_like(c_prev)
    c = np.empty_like(c_prev)
    i = np.empty_like(c_prev)
    f = np.empty_like(c_prev)
    g = np.empty_like(c_prev)
    o = np.empty_like(c_prev)
    tc = np.empty_like(c_prev)
    for b in range(B):
        for s in range(S):
            iv = 1.0 / (1.0 + math.exp(-gates[b, s]))
            fv = 1.0 / (1.0 + math.exp(-gates[b, S + s]))
            gv = math.tanh(gates[b, 2 * S + s])
            ov = 1.0 / (1.0 + math.exp(-gates[b, 3 * S + s]))
            cv = fv * c_prev[b, s] + iv * gv
            tcv = math.tanh(cv)
            i[b, s] = iv
            f[b, s] = fv
            g[b, s] = gv
            o[b, s] = ov
            c[b, s] = cv
            tc[b, s] = tcv
            h[b, s] = ov * tcv
    return h, c, i, f, g, o, tc


@njit(cache=True)
def lstm_gates_backward(dh, dc_in, i, f, g, o, c_prev, tc):
    B, S = dh.shape
    dgates = np.empty((B, 4 * S), dtype=dh.dtype)
    dc_prev = np.empty_like(dh)
    for b in range(B):
        for s in range(S):
            dc = dc_in[b, s] + dh[b, s] * o[b, s] * (1.0 - tc[b, s] * tc[b, s])
            dgates[b, s] = dc * g[b, s] * i[b, s] * (1.0 - i[b, s])
            dgates[b, S + s] = dc * c_prev[b, s] * f[b, s] * (1.0 - f[b, s])
            dgates[b, 2 * S + s] = dc * i[b, s] * (1.0 - g[b, s] * g[b, s])
            dgates[b, 3 * S + s] = dh[b, s] * tc[b, s] * o[b, s] * (1.0 - o[b, s])
            dc_prev[b, s] = dc * f[b, s]
    return dgates, dc_prev


@njit(cache=True)
def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    # scalars pre-cast to the parameter dtype: mixed float64 constants would
    # promote every element-wise product and halve throughput on float32
    dt = param.dtype
    b1 = dt.type(beta1)
    b2 = dt.type(beta2)
    o1 = dt.type(1.0 - beta1)
    o2 = dt.type(1.0 - beta2)
    lr_c = dt.type(lr / (1.0 - beta1**t))
    den_c = dt.type(1.0 / math.sqrt(1.0 - beta2**t))
    ep = dt.type(eps)
    for k in range(param.shape[0]):
        mk = b1 * m[k] + o1 * grad[k]
        vk = b2 * v[k] + o2 * grad[k] * grad[k]
        m[k] = mk
        v[k] = vk
        param[k] -= lr_c * mk / (math.sqrt(vk) * den_c + ep)
