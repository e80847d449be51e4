"""FourierNet decoder: a multiplicative filter network with latent amplitude modulation.

For one head with depth d, latent code u and coordinate x in [-1, 1]^2::

    g_i(x) = sin(x Omega_i + phi_i)
    m_i(u) = u M_i + c_i
    z_1     = m_1(u) * g_1(x)
    z_{i+1} = m_{i+1}(u) * (z_i W_i + b_i) * g_{i+1}(x)
    out     = z_d W_out + b_out

Each solution component has its own head reading its own block of the latent
vector. Evaluation is batched over snapshots and points: latents (S, k) and
coords (P, 2) give S * P rows per stage.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .fom import GridSpec
from .nn import Module, uniform_fan_in
from .tensor import (
    ContractError,
    Tensor,
    affine,
    as_tensor,
    index,
    modulate,
    reshape,
    row_outer,
    sin,
    stack,
)


@dataclass
class DecoderConfig:
    depth: int = 3
    width: int = 128
    omega_max: float = 32.0
    latent_dim: int = 50  # per head
    n_components: int = 2

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ContractError(f"decoder depth/width must be positive, got {self.depth}/{self.width}")

    def to_dict(self) -> dict:
        return asdict(self)


class FourierHead(Module):
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator):
        super().__init__()
        d, w, k = cfg.depth, cfg.width, cfg.latent_dim
        band = cfg.omega_max / d
        self.depth, self.width, self.latent_dim = d, w, k
        self.omega, self.phase, self.mod_w, self.mod_b = [], [], [], []
        for i in range(d):
            self.omega.append(self.param(f"filter{i}.omega", rng.uniform(-band, band, (2, w))))
            self.phase.append(self.param(f"filter{i}.phase", rng.uniform(-np.pi, np.pi, (1, w))))
            self.mod_w.append(self.param(f"mod{i}.weight", uniform_fan_in(rng, k, (k, w))))
            self.mod_b.append(self.param(f"mod{i}.bias", np.ones((1, w))))
        self.lin_w, self.lin_b = [], []
        for i in range(d - 1):
            bound = np.sqrt(6.0 / w)
            self.lin_w.append(self.param(f"linear{i}.weight", rng.uniform(-bound, bound, (w, w))))
            self.lin_b.append(self.param(f"linear{i}.bias", uniform_fan_in(rng, w, (1, w))))
        self.out_w = self.param("out.weight", uniform_fan_in(rng, w, (w, 1)))
        self.out_b = self.param("out.bias", np.zeros((1, 1)))

    def filters(self, coords: Tensor) -> list[Tensor]:
        return [sin(affine(coords, om, ph)) for om, ph in zip(self.omega, self.phase)]

    def __call__(self, latents: Tensor, coords: Tensor) -> Tensor:
        """(S, k) latents and (P, 2) coordinates -> (S, P) values."""
        if latents.shape[1] != self.latent_dim:
            raise ContractError(f"head expects latent width {self.latent_dim}, got {latents.shape}")
        s, p = latents.shape[0], coords.shape[0]
        g = self.filters(coords)
        mods = [affine(latents, M, c) for M, c in zip(self.mod_w, self.mod_b)]
        z = row_outer(mods[0], g[0])
        for i in range(1, self.depth):
            z = modulate(affine(z, self.lin_w[i - 1], self.lin_b[i - 1]), mods[i], g[i])
        return reshape(affine(z, self.out_w, self.out_b), (s, p))


class FourierNet(Module):
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.heads = [self.child(f"head{c}", FourierHead(cfg, rng)) for c in range(cfg.n_components)]

    def decode(self, latents: Tensor, coords) -> Tensor:
        """Latents (S, n_components * k) at points (P, 2) -> values (S, n_components, P)."""
        coords = as_tensor(coords)
        k = self.cfg.latent_dim
        if latents.data.ndim != 2 or latents.shape[1] != k * len(self.heads):
            raise ContractError(f"latents must be (S, {k * len(self.heads)}), got {latents.shape}")
        if coords.data.ndim != 2 or coords.shape[1] != 2:
            raise ContractError(f"coords must be (P, 2), got {coords.shape}")
        if not np.all(np.isfinite(coords.data)):
            raise ContractError("coords must be finite")
        outs = [head(index(latents, (slice(None), slice(c * k, (c + 1) * k))), coords)
                for c, head in enumerate(self.heads)]
        return stack(outs, axis=1)


def decode(decoder: FourierNet, latents: Tensor, coords) -> Tensor:
    return decoder.decode(latents, coords)


def decode_trajectory(decoder: FourierNet, latents: Tensor, grid: GridSpec) -> Tensor:
    """Decode every snapshot on the grid nodes -> (S, n_components, ny, nx)."""
    out = decoder.decode(latents, grid.normalized_coords())
    return reshape(out, (latents.shape[0], len(decoder.heads), grid.ny, grid.nx))
