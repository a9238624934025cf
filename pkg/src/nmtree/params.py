"""Named trainable parameters and the Adam optimizer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0


class ParameterStore:
    """Name -> Tensor map, iterated in lexicographic name order."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.states: dict[str, OptimizerState] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def num_values(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def state_for(self, name: str) -> OptimizerState:
        st = self.states.get(name)
        if st is None:
            p = self._params[name]
            st = OptimizerState(np.zeros_like(p.data), np.zeros_like(p.data), 0)
            self.states[name] = st
        return st


def init_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = 1.0 / math.sqrt(cols)
    return rng.uniform(-a, a, size=(rows, cols))


def init_embedding(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.uniform(-0.1, 0.1, size=(rows, cols))


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def step(self, store: ParameterStore, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        # check everything before touching any parameter
        for name, p in store.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
        for name, p in store.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            st = store.state_for(name)
            st.step_count += 1
            st.m = self.beta1 * st.m + (1.0 - self.beta1) * g
            st.v = self.beta2 * st.v + (1.0 - self.beta2) * g * g
            m_hat = st.m / (1.0 - self.beta1 ** st.step_count)
            v_hat = st.v / (1.0 - self.beta2 ** st.step_count)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)
