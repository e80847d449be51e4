"""Data-matching and physics-informed loss terms on decoded trajectories.

Decoded trajectories are tensors of shape (S, 2, ny, nx). The PDE residual
uses finite-difference stencils on the decoded grid and snapshot sampling,
built from tracked slicing so gradients reach every upstream parameter.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .fom import GridSpec
from .latent import orthogonality_penalty
from .tensor import ContractError, Tensor, as_tensor, hadamard, index, mean, square, stack, sub


@dataclass
class LossWeights:
    data: float = 1.0
    residual: float = 1e-4
    ic: float = 1.0
    bc: float = 1.0
    rho1: float = 1e-3
    rho2: float = 1e-3

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v < 0:
                raise ContractError(f"loss weight {name} must be non-negative, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FineTuneWeights:
    residual: float = 1e-4
    ic: float = 1.0
    bc: float = 1.0

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v < 0:
                raise ContractError(f"fine-tune weight {name} must be non-negative, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


def mse(a: Tensor, b) -> Tensor:
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ContractError(f"MSE operands differ in shape: {a.shape} vs {b.shape}")
    return mean(square(sub(a, b)))


def data_loss(decoded: Tensor, truth) -> Tensor:
    return mse(decoded, truth)


def pde_residual(decoded: Tensor, times, grid: GridSpec, reynolds: float,
                 advection: str = "central") -> Tensor:
    """Burgers residual D_t u + (u . grad) u - lap u / mu at interior nodes and snapshots.

    Returns shape (S - 2, 2, ny - 2, nx - 2). ``advection="upwind"`` swaps the
    central first derivatives for one-sided ones picked by the sign of the
    advecting velocity, matching the full-order discretization.
    """
    times = np.asarray(times, dtype=np.float64)
    if decoded.data.ndim != 4 or decoded.shape[1] != 2:
        raise ContractError(f"decoded trajectory must be (S, 2, ny, nx), got {decoded.shape}")
    if decoded.shape[0] < 3 or len(times) != decoded.shape[0]:
        raise ContractError("residual needs at least 3 snapshots with matching times")
    if decoded.shape[2:] != (grid.ny, grid.nx):
        raise ContractError(f"decoded grid {decoded.shape[2:]} does not match {(grid.ny, grid.nx)}")
    steps = np.diff(times)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, steps[0]):
        raise ContractError("residual needs uniformly spaced snapshots")
    if reynolds <= 0:
        raise ContractError(f"reynolds must be positive, got {reynolds}")
    if advection not in ("central", "upwind"):
        raise ContractError(f"unknown advection stencil {advection!r}")
    dt, hx, hy = float(steps[0]), grid.hx, grid.hy
    T = slice(1, -1)
    I = slice(1, -1)

    def at(c, ts, ys, xs):
        return index(decoded, (ts, c, ys, xs))

    w = at(0, T, I, I)
    z = at(1, T, I, I)
    if advection == "upwind":
        mask_x = Tensor((w.data >= 0).astype(np.float64))
        mask_y = Tensor((z.data >= 0).astype(np.float64))
    comps = []
    for c in range(2):
        centre = at(c, T, I, I)
        d_t = (at(c, slice(2, None), I, I) - at(c, slice(None, -2), I, I)) * (0.5 / dt)
        east, west = at(c, T, I, slice(2, None)), at(c, T, I, slice(None, -2))
        north, south = at(c, T, slice(2, None), I), at(c, T, slice(None, -2), I)
        if advection == "central":
            d_x = (east - west) * (0.5 / hx)
            d_y = (north - south) * (0.5 / hy)
        else:
            d_x = hadamard(mask_x, centre - west) * (1 / hx) + hadamard(1.0 - mask_x, east - centre) * (1 / hx)
            d_y = hadamard(mask_y, centre - south) * (1 / hy) + hadamard(1.0 - mask_y, north - centre) * (1 / hy)
        lap = (east + west - centre * 2.0) * (1 / hx ** 2) + (north + south - centre * 2.0) * (1 / hy ** 2)
        comps.append(d_t + hadamard(w, d_x) + hadamard(z, d_y) - lap * (1.0 / reynolds))
    return stack(comps, axis=1)


def residual_loss(decoded: Tensor, times, grid: GridSpec, reynolds: float, advection: str = "central",
                  fraction: float = 1.0, rng: np.random.Generator | None = None) -> Tensor:
    """MSE(r, 0) over all collocation points, or over a random subset when fraction < 1."""
    r = pde_residual(decoded, times, grid, reynolds, advection)
    if fraction < 1.0:
        if rng is None:
            raise ContractError("residual subsampling needs an rng")
        flat = r.reshape(r.size)
        n = max(1, int(round(fraction * r.size)))
        pick = np.sort(rng.choice(r.size, size=n, replace=False))
        r = index(flat, pick)
    return mean(square(r))


def ic_loss(decoded_initial: Tensor, true_ic) -> Tensor:
    return mse(decoded_initial, true_ic)


def bc_loss(decoded: Tensor, grid: GridSpec) -> Tensor:
    """MSE of decoded boundary values against the zero Dirichlet data, all snapshots."""
    if decoded.shape[-2:] != (grid.ny, grid.nx):
        raise ContractError(f"decoded grid {decoded.shape[-2:]} does not match {(grid.ny, grid.nx)}")
    rows, cols = np.nonzero(grid.boundary_mask())
    lead = (slice(None),) * (decoded.data.ndim - 2)
    edge = index(decoded, lead + (rows, cols))
    return mean(square(edge))


def total_loss(decoded: Tensor, truth, times, grid: GridSpec, reynolds: float, weights: LossWeights,
               model=None, physics: bool = False, advection: str = "central") -> tuple[Tensor, dict]:
    """Weighted training objective; returns the scalar and the unweighted term values."""
    truth = np.asarray(truth.data if isinstance(truth, Tensor) else truth)
    terms = {"data": data_loss(decoded, truth),
             "ic": ic_loss(index(decoded, 0), truth[0]),
             "bc": bc_loss(decoded, grid)}
    if physics:
        terms["residual"] = residual_loss(decoded, times, grid, reynolds, advection)
    if model is not None and model.kind == "HyperPNODE":
        terms["orth"] = orthogonality_penalty(model, weights.rho1, weights.rho2)
    total = terms["data"] * weights.data + terms["ic"] * weights.ic + terms["bc"] * weights.bc
    if physics:
        total = total + terms["residual"] * weights.residual
    if "orth" in terms:
        total = total + terms["orth"]
    return total, {k: v.item() for k, v in terms.items()}


def finetune_loss(decoded: Tensor, grid: GridSpec, times, reynolds: float, weights: FineTuneWeights,
                  true_ic, advection: str = "central", fraction: float = 1.0,
                  rng: np.random.Generator | None = None) -> tuple[Tensor, dict]:
    """Unsupervised objective: residual, analytic initial condition and zero boundary only."""
    terms = {"residual": residual_loss(decoded, times, grid, reynolds, advection, fraction, rng),
             "ic": ic_loss(index(decoded, 0), true_ic),
             "bc": bc_loss(decoded, grid)}
    total = terms["residual"] * weights.residual + terms["ic"] * weights.ic + terms["bc"] * weights.bc
    return total, {k: v.item() for k, v in terms.items()}
