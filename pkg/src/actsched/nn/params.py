"""Named parameter store with deterministic initialization.

Creation order is the model build order, and every random draw comes from the
generator handed to the store, so a (seed, architecture) pair fully determines
the initial weights.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class ParameterStore:
    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name}")
        self._params[name] = Tensor(np.ascontiguousarray(value, dtype=self.dtype))
        return self._params[name]

    def linear(self, name: str, fan_in: int, fan_out: int, rng) -> tuple[Tensor, Tensor]:
        """Weight (fan_in, fan_out) uniform in +-1/sqrt(fan_in), zero bias."""
        bound = 1.0 / np.sqrt(fan_in)
        w = self.add(name + ".w", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        b = self.add(name + ".b", np.zeros(fan_out))
        return w, b

    def embedding(self, name: str, count: int, dim: int, rng) -> Tensor:
        bound = 1.0 / np.sqrt(dim)
        return self.add(name, rng.uniform(-bound, bound, size=(count, dim)))

    def lstm_layer(self, name: str, in_size: int, S: int, rng):
        """Gate order (input, forget, cell, output); forget bias starts at 1."""
        bound_x = 1.0 / np.sqrt(in_size)
        bound_h = 1.0 / np.sqrt(S)
        wx = self.add(name + ".wx", rng.uniform(-bound_x, bound_x, size=(in_size, 4 * S)))
        wh = self.add(name + ".wh", rng.uniform(-bound_h, bound_h, size=(S, 4 * S)))
        bias = np.zeros(4 * S)
        bias[S : 2 * S] = 1.0
        b = self.add(name + ".b", bias)
        return wx, wh, b

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.value for name, t in self._params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name}")
            src = arrays[name]
            if src.shape != t.value.shape:
                raise ValueError(f"shape mismatch for {name}")
            t.value = np.ascontiguousarray(src, dtype=self.dtype)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self._params.items()}
