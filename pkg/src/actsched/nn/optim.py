"""Adam optimizer over a ParameterStore."""

from __future__ import annotations

import numpy as np

from . import backend
from .params import ParameterStore


class NonFiniteGradError(RuntimeError):
    pass


def adam_step(param, grad, m, v, t, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """One functional Adam update; returns the new parameter array.

    m and v are updated in place; t is the 1-based step count.
    """
    if t < 1:
        raise ValueError("step count t must be >= 1")
    out = param.copy()
    backend.adam_update(
        out.ravel(), np.ascontiguousarray(grad).ravel(), m.ravel(), v.ravel(),
        t, lr, beta1, beta2, eps,
    )
    return out


class Adam:
    def __init__(self, store: ParameterStore, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.moments = {
            name: (np.zeros_like(t.value), np.zeros_like(t.value))
            for name, t in store.items()
        }

    def step(self) -> None:
        self.t += 1
        for name, tensor in self.store.items():
            if tensor.grad is None:
                continue
            grad = np.ascontiguousarray(tensor.grad, dtype=tensor.value.dtype)
            if not np.all(np.isfinite(grad)):
                raise NonFiniteGradError(f"non-finite gradient in {name}")
            m, v = self.moments[name]
            backend.adam_update(
                tensor.value.ravel(), grad.ravel(), m.ravel(), v.ravel(),
                self.t, self.lr, self.beta1, self.beta2, self.eps,
            )

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.array([self.t], dtype=np.int64)}
        for name, (m, v) in self.moments.items():
            out[f"adam.m.{name}"] = m
            out[f"adam.v.{name}"] = v
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["adam.t"][0])
        for name in self.moments:
            self.moments[name] = (
                arrays[f"adam.m.{name}"].astype(self.store.dtype, copy=True),
                arrays[f"adam.v.{name}"].astype(self.store.dtype, copy=True),
            )
