"""Full-order 2D viscous Burgers solver used as ground truth.

    dv/dt = -(v . grad) v + (1/mu) lap v   on [-3, 3]^2,  v = 0 on the boundary

Diffusion uses the 5-point central Laplacian, advection first-order upwind
(direction picked by the sign of the advecting velocity at the node). Time
stepping is backward Euler; each step is a Newton solve with an analytically
assembled CSR Jacobian over interior unknowns and a sparse LU solve.

States are float64 arrays of shape (2, ny, nx) holding the components (w, z);
row index runs along y, column index along x.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

COMPONENTS = ("w", "z")


class SolverError(RuntimeError):
    def __init__(self, message: str, residual_norm: float = float("nan"), step: int | None = None,
                 reynolds: float | None = None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.step = step
        self.reynolds = reynolds


@dataclass(frozen=True)
class GridSpec:
    nx: int = 64
    ny: int = 64
    x_range: tuple[float, float] = (-3.0, 3.0)
    y_range: tuple[float, float] = (-3.0, 3.0)

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3 nodes per axis, got {self.nx}x{self.ny}")
        if not (self.x_range[1] > self.x_range[0] and self.y_range[1] > self.y_range[0]):
            raise ValueError(f"empty domain {self.x_range} x {self.y_range}")
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        object.__setattr__(self, "y_range", tuple(float(v) for v in self.y_range))

    @property
    def hx(self) -> float:
        return (self.x_range[1] - self.x_range[0]) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y_range[1] - self.y_range[0]) / (self.ny - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_range[0], self.x_range[1], self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.y_range[0], self.y_range[1], self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as (X, Y), each of shape (ny, nx)."""
        return np.meshgrid(self.x, self.y, indexing="xy")

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros((self.ny, self.nx), dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask

    def normalized_coords(self) -> np.ndarray:
        """Node coordinates mapped to [-1, 1]^2, flattened row-major to (ny*nx, 2)."""
        X, Y = self.mesh()
        xs = 2.0 * (X - self.x_range[0]) / (self.x_range[1] - self.x_range[0]) - 1.0
        ys = 2.0 * (Y - self.y_range[0]) / (self.y_range[1] - self.y_range[0]) - 1.0
        return np.stack([xs.ravel(), ys.ravel()], axis=1)

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "x_range": list(self.x_range), "y_range": list(self.y_range)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(int(d["nx"]), int(d["ny"]), tuple(d["x_range"]), tuple(d["y_range"]))


@dataclass(frozen=True)
class FomConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    dt: float = 1.0 / 1000.0
    t_final: float = 1.0
    reynolds: float = 100.0
    snapshot_stride: int = 20
    newton_tol: float = 1e-10
    newton_max_iters: int = 20

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_final < 0:
            raise ValueError(f"t_final must be non-negative, got {self.t_final}")
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > 1e-12 * max(1.0, steps) and abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"t_final/dt = {steps} is not an integer step count")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be a positive integer")
        if self.n_steps % self.snapshot_stride:
            raise ValueError(f"snapshot_stride {self.snapshot_stride} does not divide {self.n_steps} steps")
        if self.reynolds <= 0:
            raise ValueError(f"reynolds must be positive, got {self.reynolds}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def n_snapshots(self) -> int:
        return self.n_steps // self.snapshot_stride + 1

    def snapshot_times(self) -> np.ndarray:
        return np.arange(self.n_snapshots) * (self.snapshot_stride * self.dt)


def gaussian_bump(x, y):
    """0.8 exp(-(x^2 + y^2) / 1.02), the unclamped initial profile."""
    return 0.8 * np.exp(-(np.asarray(x) ** 2 + np.asarray(y) ** 2) / 1.02)


def initial_condition(grid: GridSpec) -> np.ndarray:
    """Gaussian bump in both components, zero on the boundary."""
    X, Y = grid.mesh()
    bump = gaussian_bump(X, Y)
    bump[grid.boundary_mask()] = 0.0
    return np.stack([bump, bump.copy()])


def _upwind_parts(q: np.ndarray, w: np.ndarray, z: np.ndarray, hx: float, hy: float):
    c = q[1:-1, 1:-1]
    back_x = w >= 0.0
    back_y = z >= 0.0
    dqx = np.where(back_x, c - q[1:-1, :-2], q[1:-1, 2:] - c) / hx
    dqy = np.where(back_y, c - q[:-2, 1:-1], q[2:, 1:-1] - c) / hy
    return dqx, dqy, back_x, back_y


def _laplacian(q: np.ndarray, hx: float, hy: float) -> np.ndarray:
    c = q[1:-1, 1:-1]
    return ((q[1:-1, 2:] - 2.0 * c + q[1:-1, :-2]) / hx ** 2
            + (q[2:, 1:-1] - 2.0 * c + q[:-2, 1:-1]) / hy ** 2)


def spatial_residual(state: np.ndarray, reynolds: float, grid: GridSpec) -> np.ndarray:
    """Semi-discrete right-hand side -(v . grad) v + lap v / mu; zero on boundary nodes."""
    if reynolds <= 0:
        raise ValueError(f"reynolds must be positive, got {reynolds}")
    hx, hy = grid.hx, grid.hy
    w = state[0, 1:-1, 1:-1]
    z = state[1, 1:-1, 1:-1]
    out = np.zeros_like(state)
    for c in range(2):
        dqx, dqy, _, _ = _upwind_parts(state[c], w, z, hx, hy)
        out[c, 1:-1, 1:-1] = -(w * dqx + z * dqy) + _laplacian(state[c], hx, hy) / reynolds
    return out


def _interior_index(grid: GridSpec) -> np.ndarray:
    """Unknown numbering: idx[c, i, j] for interior (i, j), -1 on the boundary."""
    ni = (grid.ny - 2) * (grid.nx - 2)
    idx = -np.ones((2, grid.ny, grid.nx), dtype=np.int64)
    block = np.arange(ni).reshape(grid.ny - 2, grid.nx - 2)
    idx[0, 1:-1, 1:-1] = block
    idx[1, 1:-1, 1:-1] = block + ni
    return idx


def residual_jacobian(state: np.ndarray, reynolds: float, grid: GridSpec) -> sp.csr_matrix:
    """d spatial_residual / d (interior unknowns), as CSR over the interior numbering."""
    hx, hy = grid.hx, grid.hy
    idx = _interior_index(grid)
    n = 2 * (grid.ny - 2) * (grid.nx - 2)
    w = state[0, 1:-1, 1:-1]
    z = state[1, 1:-1, 1:-1]
    nu = 1.0 / reynolds
    rows, cols, vals = [], [], []

    def put(r, cidx, v):
        keep = cidx >= 0
        v = np.broadcast_to(v, r.shape)
        rows.append(r[keep])
        cols.append(cidx[keep])
        vals.append(v[keep])

    for c in range(2):
        r = idx[c, 1:-1, 1:-1]
        q = state[c]
        dqx, dqy, back_x, back_y = _upwind_parts(q, w, z, hx, hy)
        # advection of q by (w, z), stencil part
        sx = np.where(back_x, 1.0, -1.0) / hx
        sy = np.where(back_y, 1.0, -1.0) / hy
        put(r, r, -(w * sx + z * sy) - 2.0 * nu * (1.0 / hx ** 2 + 1.0 / hy ** 2))
        put(r, idx[c, 1:-1, :-2], np.where(back_x, w / hx, 0.0) + nu / hx ** 2)
        put(r, idx[c, 1:-1, 2:], np.where(back_x, 0.0, -w / hx) + nu / hx ** 2)
        put(r, idx[c, :-2, 1:-1], np.where(back_y, z / hy, 0.0) + nu / hy ** 2)
        put(r, idx[c, 2:, 1:-1], np.where(back_y, 0.0, -z / hy) + nu / hy ** 2)
        # dependence on the advecting velocity itself
        put(r, idx[0, 1:-1, 1:-1], -dqx)
        put(r, idx[1, 1:-1, 1:-1], -dqy)

    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


@dataclass
class StepInfo:
    residual_history: list[float]

    @property
    def iterations(self) -> int:
        return len(self.residual_history)


def backward_euler_step(u_n: np.ndarray, cfg: FomConfig, info: StepInfo | None = None) -> np.ndarray:
    """Solve u - u_n - dt * R(u) = 0 for u by Newton's method."""
    grid, dt, mu = cfg.grid, cfg.dt, cfg.reynolds
    interior = ~grid.boundary_mask()
    n = 2 * (grid.ny - 2) * (grid.nx - 2)
    eye = sp.identity(n, format="csr")
    u = u_n.copy()
    u[:, ~interior] = 0.0
    history = []
    for _ in range(cfg.newton_max_iters + 1):
        F = u - u_n - dt * spatial_residual(u, mu, grid)
        F_int = F[:, interior].ravel()
        norm = float(np.max(np.abs(F_int)))
        history.append(norm)
        if not math.isfinite(norm):
            break
        if norm < cfg.newton_tol:
            if info is not None:
                info.residual_history = history
            return u
        if len(history) > cfg.newton_max_iters:
            break
        J = eye - dt * residual_jacobian(u, mu, grid)
        delta = spsolve(J.tocsc(), -F_int, permc_spec="MMD_AT_PLUS_A")
        u[:, interior] += delta.reshape(2, -1)
    if info is not None:
        info.residual_history = history
    raise SolverError(
        f"Newton did not converge in {cfg.newton_max_iters} iterations (residual {history[-1]:.3e})",
        residual_norm=history[-1],
    )


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_snapshots, 2, ny, nx)
    wall_seconds: float
    newton_iterations: list[int] = field(default_factory=list)


def solve(cfg: FomConfig) -> Trajectory:
    start = time.perf_counter()
    u = initial_condition(cfg.grid)
    snaps = [u.copy()]
    iters = []
    for step in range(1, cfg.n_steps + 1):
        info = StepInfo([])
        try:
            u = backward_euler_step(u, cfg, info)
        except SolverError as err:
            err.step = step
            err.reynolds = cfg.reynolds
            raise SolverError(f"step {step} (t={step * cfg.dt:.6g}, mu={cfg.reynolds}): {err}",
                              err.residual_norm, step, cfg.reynolds) from err
        iters.append(info.iterations)
        if step % cfg.snapshot_stride == 0:
            snaps.append(u.copy())
    return Trajectory(cfg.snapshot_times(), np.stack(snaps), time.perf_counter() - start, iters)


def explicit_rk4_reference(grid: GridSpec, reynolds: float, t_end: float, dt_ref: float) -> np.ndarray:
    """Classical RK4 march of the semi-discrete system; a fine-step oracle for the implicit solver."""
    n = int(round(t_end / dt_ref))
    h = t_end / n if n else 0.0
    u = initial_condition(grid)
    f = lambda v: spatial_residual(v, reynolds, grid)
    for _ in range(n):
        k1 = f(u)
        k2 = f(u + 0.5 * h * k1)
        k3 = f(u + 0.5 * h * k2)
        k4 = f(u + h * k3)
        u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


@dataclass
class Dataset:
    grid: GridSpec
    times: np.ndarray
    params: list[float]
    states: np.ndarray  # (n_params, n_snapshots, 2, ny, nx)
    fom_seconds: list[float] = field(default_factory=list)
    components: tuple[str, ...] = COMPONENTS
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = [float(p) for p in self.params]
        expected = (len(self.params), len(self.times), len(self.components), self.grid.ny, self.grid.nx)
        if self.states.shape != expected:
            raise ValueError(f"dataset states have shape {self.states.shape}, expected {expected}")
        if len(self.times) and (self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0)):
            raise ValueError("dataset times must start at 0 and increase strictly")

    def index_of(self, mu: float) -> int:
        for i, p in enumerate(self.params):
            if p == float(mu):
                return i
        raise KeyError(f"mu={mu} not in dataset (has {self.params})")

    def trajectory(self, mu: float) -> np.ndarray:
        return self.states[self.index_of(mu)]

    def subset(self, params: list[float]) -> "Dataset":
        ids = [self.index_of(m) for m in params]
        secs = [self.fom_seconds[i] for i in ids] if self.fom_seconds else []
        return Dataset(self.grid, self.times, [self.params[i] for i in ids], self.states[ids], secs,
                       self.components, self.config)


def _solve_one(cfg: FomConfig) -> Trajectory:
    return solve(cfg)


def generate_dataset(grid: GridSpec, defaults: FomConfig, params: list[float], workers: int = 1) -> Dataset:
    """Run one FOM solve per Reynolds number and stack the snapshots."""
    if not params:
        raise ValueError("params must be non-empty")
    for mu in params:
        if not mu > 0:
            raise ValueError(f"Reynolds numbers must be positive, got {mu}")
    cfgs = [replace(defaults, grid=grid, reynolds=float(mu)) for mu in params]
    if workers > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(_solve_one, cfgs))
    else:
        trajs = [solve(c) for c in cfgs]
    return Dataset(
        grid=grid,
        times=trajs[0].times,
        params=[float(p) for p in params],
        states=np.stack([t.states for t in trajs]),
        fom_seconds=[t.wall_seconds for t in trajs],
        config={"dt": defaults.dt, "t_final": defaults.t_final, "snapshot_stride": defaults.snapshot_stride,
                "newton_tol": defaults.newton_tol, "newton_max_iters": defaults.newton_max_iters},
    )
