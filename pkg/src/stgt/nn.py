"""Parameter storage and the small feed-forward block used everywhere."""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ParameterStore:
    """Named learnable tensors, kept in creation order."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.array(value, dtype=np.float64, order="C"), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def num_values(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    # initialisers
    def glorot(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self.rng.uniform(-limit, limit, size=(fan_in, fan_out)))

    def normal(self, name: str, shape: tuple, std: float) -> Tensor:
        return self.add(name, self.rng.normal(0.0, std, size=shape))

    def zeros(self, name: str, shape: tuple) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple) -> Tensor:
        return self.add(name, np.ones(shape))


class FFN:
    """Two linear maps with a nonlinearity in between, applied on the last axis."""

    def __init__(self, store: ParameterStore, prefix: str, n_in: int, n_hidden: int, n_out: int,
                 activation: str = "silu"):
        self.w1 = store.glorot(f"{prefix}.w1", n_in, n_hidden)
        self.b1 = store.zeros(f"{prefix}.b1", (n_hidden,))
        self.w2 = store.glorot(f"{prefix}.w2", n_hidden, n_out)
        self.b2 = store.zeros(f"{prefix}.b2", (n_out,))
        self.activation = activation
        self.n_in = n_in

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ValueError(f"FFN expects width {self.n_in}, got {x.shape[-1]}")
        h = ad.activation(ad.add(ad.matmul(x, self.w1), self.b1), self.activation)
        return ad.add(ad.matmul(h, self.w2), self.b2)


class LayerNorm:
    def __init__(self, store: ParameterStore, prefix: str, width: int, eps: float = ad.LAYER_NORM_EPS):
        self.gain = store.ones(f"{prefix}.gain", (width,))
        self.bias = store.zeros(f"{prefix}.bias", (width,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, self.eps)
