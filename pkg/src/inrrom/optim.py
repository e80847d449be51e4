"""Adam with per-group learning rates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


@dataclass
class ParamGroup:
    name: str
    params: list[Parameter]
    lr: float


@dataclass
class Adam:
    groups: list[ParamGroup]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for p in self.parameters():
            self.m.setdefault(p.name, np.zeros_like(p.data))
            self.v.setdefault(p.name, np.zeros_like(p.data))

    def parameters(self) -> list[Parameter]:
        return [p for g in self.groups for p in g.params]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for g in self.groups:
            for p in g.params:
                if not p.requires_grad:
                    continue
                m, v = self.m[p.name], self.v[p.name]
                m *= self.beta1
                m += (1.0 - self.beta1) * p.grad
                v *= self.beta2
                v += (1.0 - self.beta2) * p.grad * p.grad
                if g.lr == 0.0:
                    continue
                p.data -= g.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
