"""Small parameter containers built on the autograd core."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


class Module:
    """Anything exposing named Parameters. Subclasses register them in ``self._params``."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def param(self, name: str, value) -> Parameter:
        p = Parameter(value, name)
        self._params[name] = p
        return p

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self._params)

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, name: str,
                 bias: bool = True):
        super().__init__()
        self.weight = self.param(f"{name}.weight", glorot(rng, fan_in, fan_out))
        self.bias = self.param(f"{name}.bias", np.zeros(fan_out)) if bias else None

    def __call__(self, x) -> Tensor:
        y = ag.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class MLP(Module):
    """ReLU hidden layers, linear output layer."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, name: str):
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.layers = [Linear(a, b, rng, f"{name}.{k}") for k, (a, b) in enumerate(zip(sizes, sizes[1:]))]
        for layer in self.layers:
            self._params.update(layer.named_parameters())
        self.sizes = list(sizes)

    def __call__(self, x) -> Tensor:
        for layer in self.layers[:-1]:
            x = ag.relu(layer(x))
        return self.layers[-1](x)
