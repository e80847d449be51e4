"""Minimal module/parameter bookkeeping on top of the tensor tape."""
from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from .tensor import ContractError, DimensionError, Parameter, Tensor, affine


class Module:
    """Holds named Parameters and child modules; names form dotted paths."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self._children: dict[str, Module] = {}

    def param(self, name: str, value: np.ndarray) -> Parameter:
        p = Parameter(value, name)
        self._params[name] = p
        return p

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, c in self._children.items():
            yield from c.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def finalize_names(self, prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class DenseMlp(Module):
    """x -> tanh(x W0 + b0) -> ... -> x WL + bL, acting on row vectors."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None):
        super().__init__()
        if len(sizes) < 2:
            raise ContractError(f"an MLP needs at least input and output sizes, got {sizes}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.sizes = [int(s) for s in sizes]
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            self.weights.append(self.param(f"layer{i}.weight", uniform_fan_in(rng, a, (a, b))))
            self.biases.append(self.param(f"layer{i}.bias", uniform_fan_in(rng, a, (1, b))))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.sizes[0]:
            raise DimensionError(f"MLP expects {self.sizes[0]} inputs, got shape {x.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = affine(h, W, b)
            if i < last:
                h = h.tanh()
        return h


def dense_count(sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
