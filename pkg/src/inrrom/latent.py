"""Latent velocity models (NODE, PNODE, HyperPNODE) and the unrolled RK4 integrator.

All three kinds take the latent state and time as input; PNODE appends the
scaled Reynolds feature to the MLP input, HyperPNODE instead feeds it to a
small hypernetwork that emits the diagonal factors of every internal
low-rank layer ``U diag(s) V^T``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .nn import DenseMlp, Module, dense_count, uniform_fan_in
from .tensor import (
    ContractError,
    Tensor,
    affine,
    concat,
    frobenius_norm,
    hadamard,
    matmul,
    tile_rows,
    transpose,
)

KINDS = ("NODE", "PNODE", "HyperPNODE")


@dataclass
class LatentConfig:
    kind: str = "HyperPNODE"
    latent_dim: int = 50  # per solution component
    n_components: int = 2
    hidden: int = 256
    depth: int = 3  # hidden layers
    rank: int = 50
    hyper_hidden: int = 50
    hyper_depth: int = 1
    n_sub: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "HyperPNODE" and self.depth < 2:
            raise ContractError("HyperPNODE needs depth >= 2 to have an internal low-rank layer")

    @property
    def state_dim(self) -> int:
        return self.latent_dim * self.n_components

    @property
    def n_internal(self) -> int:
        return self.depth - 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MuScaling:
    """Standardized log10 of the Reynolds number, frozen at training time."""

    center: float = 0.0
    scale: float = 1.0

    @classmethod
    def fit(cls, params: Sequence[float]) -> "MuScaling":
        logs = np.log10(np.asarray(params, dtype=np.float64))
        std = float(logs.std())
        return cls(float(logs.mean()), std if std > 0 else 1.0)

    def encode(self, mu: float) -> float:
        return (math.log10(mu) - self.center) / self.scale


class LowRankMlp(Module):
    """Dense first/last layers; internal layers h -> tanh(U diag(s) V^T h + b)."""

    def __init__(self, n_in: int, n_out: int, hidden: int, depth: int, rank: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out, self.hidden, self.rank = n_in, n_out, hidden, rank
        self.W_first = self.param("first.weight", uniform_fan_in(rng, n_in, (n_in, hidden)))
        self.b_first = self.param("first.bias", uniform_fan_in(rng, n_in, (1, hidden)))
        self.U: list = []
        self.V: list = []
        self.b: list = []
        for l in range(depth - 1):
            self.U.append(self.param(f"internal{l}.U", _orthonormal(rng, hidden, rank)))
            self.V.append(self.param(f"internal{l}.V", _orthonormal(rng, hidden, rank)))
            self.b.append(self.param(f"internal{l}.bias", uniform_fan_in(rng, hidden, (1, hidden))))
        self.W_last = self.param("last.weight", uniform_fan_in(rng, hidden, (hidden, n_out)))
        self.b_last = self.param("last.bias", uniform_fan_in(rng, hidden, (1, n_out)))

    @property
    def n_internal(self) -> int:
        return len(self.U)

    def internal_layer(self, l: int, h: Tensor, s: Tensor) -> Tensor:
        """Pre-activation of internal layer l for a row vector h."""
        # row form of U diag(s) V^T h
        hv = matmul(h, self.V[l])
        if hv.shape[0] > 1:
            s = tile_rows(s, hv.shape[0])
        return affine(hadamard(hv, s), transpose(self.U[l]), self.b[l])

    def __call__(self, x: Tensor, diagonals: Sequence[Tensor]) -> Tensor:
        if len(diagonals) != self.n_internal:
            raise ContractError(f"expected {self.n_internal} diagonal vectors, got {len(diagonals)}")
        h = affine(x, self.W_first, self.b_first).tanh()
        for l, s in enumerate(diagonals):
            h = self.internal_layer(l, h, s).tanh()
        return affine(h, self.W_last, self.b_last)


def _orthonormal(rng: np.random.Generator, n: int, r: int) -> np.ndarray:
    q, rr = np.linalg.qr(rng.normal(size=(n, r)))
    return q * np.sign(np.diag(rr))


class HyperNet(Module):
    """Maps the scaled Reynolds feature to the stacked diagonals of all internal layers."""

    def __init__(self, rank: int, n_internal: int, hidden: int = 50, depth: int = 1,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.rank, self.n_internal = rank, n_internal
        self.mlp = self.child("mlp", DenseMlp([1] + [hidden] * depth + [rank * n_internal], rng))
        # start near s = 1 so every low-rank layer begins as U V^T
        self.mlp.weights[-1].data *= 1e-2
        self.mlp.biases[-1].data[:] = 1.0

    def __call__(self, mu_feature: float) -> list[Tensor]:
        out = self.mlp(Tensor([[mu_feature]]))
        r = self.rank
        return [out[:, l * r:(l + 1) * r] for l in range(self.n_internal)]


class LatentDynamics(Module):
    """Velocity model f(u, t; mu) for one of the three kinds."""

    def __init__(self, cfg: LatentConfig, rng: np.random.Generator | None = None,
                 mu_scaling: MuScaling | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.mu_scaling = mu_scaling or MuScaling()
        k = cfg.state_dim
        if cfg.kind == "NODE":
            self.net = self.child("ode", DenseMlp([k + 1] + [cfg.hidden] * cfg.depth + [k], rng))
        elif cfg.kind == "PNODE":
            self.net = self.child("ode", DenseMlp([k + 2] + [cfg.hidden] * cfg.depth + [k], rng))
        else:
            self.net = self.child("ode", LowRankMlp(k + 1, k, cfg.hidden, cfg.depth, cfg.rank, rng))
            self.hyper = self.child("hyper", HyperNet(cfg.rank, cfg.n_internal, cfg.hyper_hidden,
                                                      cfg.hyper_depth, rng))

    @property
    def kind(self) -> str:
        return self.cfg.kind

    def conditioning(self, mu_feature: float):
        """Per-trajectory context: hypernetwork diagonals for HyperPNODE, the raw feature otherwise."""
        if self.kind == "HyperPNODE":
            return self.hyper(mu_feature)
        return mu_feature

    def velocity(self, u: Tensor, t: float, context) -> Tensor:
        if u.shape != (1, self.cfg.state_dim):
            raise ContractError(f"latent state must have shape (1, {self.cfg.state_dim}), got {u.shape}")
        if self.kind == "NODE":
            return self.net(concat([u, Tensor([[t]])], axis=1))
        if self.kind == "PNODE":
            return self.net(concat([u, Tensor([[t, float(context)]])], axis=1))
        if not isinstance(context, (list, tuple)):
            raise ContractError("HyperPNODE velocity needs the hypernetwork diagonals as context")
        return self.net(concat([u, Tensor([[t]])], axis=1), context)

    def trajectory(self, u0: Tensor, times: Sequence[float], mu: float) -> Tensor:
        """Latent states at every snapshot instant for Reynolds number mu, shape (S, state_dim)."""
        ctx = self.conditioning(self.mu_scaling.encode(mu))
        return integrate(lambda u, t: self.velocity(u, t, ctx), u0, times, self.cfg.n_sub)


Velocity = Callable[[Tensor, float], Tensor]


def rk4_step(f: Velocity, u: Tensor, t: float, h: float) -> Tensor:
    if not h > 0:
        raise ContractError(f"step size must be positive, got {h}")
    k1 = f(u, t)
    k2 = f(u + k1 * (h / 2), t + h / 2)
    k3 = f(u + k2 * (h / 2), t + h / 2)
    k4 = f(u + k3 * h, t + h)
    return u + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6)


def integrate(f: Velocity, u0: Tensor, times: Sequence[float], n_sub: int = 1) -> Tensor:
    """March u0 through the snapshot instants with n_sub RK4 substeps per interval."""
    times = [float(t) for t in times]
    if not times or times[0] != 0.0:
        raise ContractError("snapshot times must start at 0")
    if any(b <= a for a, b in zip(times[:-1], times[1:])):
        raise ContractError("snapshot times must be strictly increasing")
    states = [u0]
    u = u0
    for a, b in zip(times[:-1], times[1:]):
        h = (b - a) / n_sub
        for j in range(n_sub):
            u = rk4_step(f, u, a + j * h, h)
        states.append(u)
    return concat(states, axis=0)


def orthogonality_penalty(model: LatentDynamics, rho1: float, rho2: float) -> Tensor:
    """sum_l rho1 ||U_l^T U_l - I||_F + rho2 ||V_l^T V_l - I||_F."""
    if model.kind != "HyperPNODE":
        raise ContractError(f"orthogonality penalty is defined for HyperPNODE only, not {model.kind}")
    net: LowRankMlp = model.net
    eye = Tensor(np.eye(net.rank))
    total = None
    for U, V in zip(net.U, net.V):
        term = (frobenius_norm(matmul(transpose(U), U) - eye) * rho1
                + frobenius_norm(matmul(transpose(V), V) - eye) * rho2)
        total = term if total is None else total + term
    return total


def count_parameters(cfg: LatentConfig) -> int:
    """Trainable scalars in the forecaster (ODE net plus hypernetwork)."""
    k, n, d = cfg.state_dim, cfg.hidden, cfg.depth
    if cfg.kind == "NODE":
        return dense_count([k + 1] + [n] * d + [k])
    if cfg.kind == "PNODE":
        return dense_count([k + 2] + [n] * d + [k])
    low_rank = (d - 1) * (2 * n * cfg.rank + n)
    edges = (k + 1) * n + n + n * k + k
    hyper = dense_count([1] + [cfg.hyper_hidden] * cfg.hyper_depth + [cfg.rank * (d - 1)])
    return edges + low_rank + hyper
