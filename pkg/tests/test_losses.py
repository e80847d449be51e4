import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _gradcheck import assert_gradients
from inrrom.decoder import DecoderConfig
from inrrom.fom import FomConfig, GridSpec, initial_condition, solve
from inrrom.latent import LatentConfig
from inrrom.losses import (
    FineTuneWeights,
    LossWeights,
    bc_loss,
    data_loss,
    finetune_loss,
    ic_loss,
    pde_residual,
    residual_loss,
    total_loss,
)
from inrrom.tensor import ContractError, Parameter, Tensor, index
from inrrom.trainer import RomModel, TrainConfig, forward_pass

GRID = GridSpec(6, 5)
TIMES = np.linspace(0.0, 0.4, 5)


def loop_mse(a, b):
    a = np.ravel(a)
    b = np.broadcast_to(b, np.shape(a)).ravel() if np.ndim(b) == 0 else np.ravel(b)
    s = 0.0
    for x, y in zip(a, b):
        s += (x - y) ** 2
    return s / len(a)


def loop_residual(u, times, grid, mu):
    """Central differences in time and space, node by node."""
    S, _, ny, nx = u.shape
    dt, hx, hy = times[1] - times[0], grid.hx, grid.hy
    out = np.zeros((S - 2, 2, ny - 2, nx - 2))
    for n in range(1, S - 1):
        for c in range(2):
            for i in range(1, ny - 1):
                for j in range(1, nx - 1):
                    q = u[n, c]
                    dq_t = (u[n + 1, c, i, j] - u[n - 1, c, i, j]) / (2 * dt)
                    dq_x = (q[i, j + 1] - q[i, j - 1]) / (2 * hx)
                    dq_y = (q[i + 1, j] - q[i - 1, j]) / (2 * hy)
                    lap = ((q[i, j + 1] - 2 * q[i, j] + q[i, j - 1]) / hx ** 2
                           + (q[i + 1, j] - 2 * q[i, j] + q[i - 1, j]) / hy ** 2)
                    w, z = u[n, 0, i, j], u[n, 1, i, j]
                    out[n - 1, c, i - 1, j - 1] = dq_t + w * dq_x + z * dq_y - lap / mu
    return out


def loop_boundary_mse(u, grid):
    vals = []
    for s in range(u.shape[0]):
        for c in range(u.shape[1]):
            for i in range(grid.ny):
                for j in range(grid.nx):
                    if i in (0, grid.ny - 1) or j in (0, grid.nx - 1):
                        vals.append(u[s, c, i, j])
    return loop_mse(vals, np.zeros(len(vals)))


def test_data_loss_examples():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 2, 5, 6)), rng.normal(size=(3, 2, 5, 6))
    assert data_loss(Tensor(a), a).item() == 0.0
    assert data_loss(Tensor(a + 1.0), a).item() == pytest.approx(1.0, abs=1e-12)
    assert abs(data_loss(Tensor(a), b).item() - loop_mse(a, b)) < 1e-12
    with pytest.raises(ContractError):
        data_loss(Tensor(a), b[:2])


def test_zero_trajectory_has_zero_residual():
    assert not np.any(pde_residual(Tensor(np.zeros((5, 2, 5, 6))), TIMES, GRID, 100.0).data)


def test_linear_field_residual():
    X, _ = GRID.mesh()
    u = np.zeros((5, 2, 5, 6))
    u[:, 0] = X
    r = pde_residual(Tensor(u), TIMES, GRID, 100.0).data
    np.testing.assert_allclose(r[:, 0], np.broadcast_to(X[1:-1, 1:-1], r[:, 0].shape), rtol=0, atol=1e-10)
    np.testing.assert_allclose(r, loop_residual(u, TIMES, GRID, 100.0), rtol=0, atol=1e-10)
    assert not np.any(r[:, 1])


def test_residual_matches_loop_oracle_on_random_field():
    u = np.random.default_rng(1).normal(size=(5, 2, 5, 6))
    np.testing.assert_allclose(pde_residual(Tensor(u), TIMES, GRID, 37.0).data, loop_residual(u, TIMES, GRID, 37.0),
                               rtol=1e-12, atol=1e-10)


def test_upwind_residual_vanishes_where_fom_is_stationary():
    # a stationary state of the discrete full-order operator has zero upwind spatial part
    u = np.zeros((3, 2, 5, 6))
    assert not np.any(pde_residual(Tensor(u), TIMES[:3], GRID, 10.0, advection="upwind").data)


def _fom_residual_rms(dt):
    grid = GridSpec(16, 16)
    stride = int(round(0.02 / dt))
    traj = solve(FomConfig(grid, dt=dt, t_final=0.2, reynolds=100.0, snapshot_stride=stride))
    return float(np.sqrt(residual_loss(Tensor(traj.states), traj.times, grid, 100.0).item()))


def test_fom_residual_drops_when_dt_is_refined():
    assert _fom_residual_rms(0.0025) < _fom_residual_rms(0.005)


def test_ic_and_bc_examples():
    ic = initial_condition(GRID)
    assert ic_loss(Tensor(ic), ic).item() == 0.0
    u = np.zeros((4, 2, 5, 6))
    u[:, :, 1:-1, 1:-1] = 3.0
    assert bc_loss(Tensor(u), GRID).item() == 0.0
    u[:, :, GRID.boundary_mask()] = 0.1
    assert bc_loss(Tensor(u), GRID).item() == pytest.approx(0.01, rel=1e-14)
    v = np.random.default_rng(2).normal(size=(4, 2, 5, 6))
    assert abs(bc_loss(Tensor(v), GRID).item() - loop_boundary_mse(v, GRID)) < 1e-12


def _fields(seed=3):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(5, 2, 5, 6)) * 0.3, rng.normal(size=(5, 2, 5, 6)) * 0.3


def test_total_loss_data_only():
    d, t = _fields()
    w = LossWeights(data=1.0, residual=0.0, ic=0.0, bc=0.0)
    total, _ = total_loss(Tensor(d), t, TIMES, GRID, 100.0, w, physics=True)
    assert total.item() == data_loss(Tensor(d), t).item()


def test_total_loss_without_physics_ignores_residual_weight():
    d, t = _fields()
    a, _ = total_loss(Tensor(d), t, TIMES, GRID, 100.0, LossWeights(residual=0.0))
    b, terms = total_loss(Tensor(d), t, TIMES, GRID, 100.0, LossWeights(residual=123.0))
    assert a.item() == b.item() and "residual" not in terms


def test_total_loss_recomposes_terms():
    d, t = _fields()
    ones = LossWeights(1.0, 1.0, 1.0, 1.0)
    total, terms = total_loss(Tensor(d), t, TIMES, GRID, 100.0, ones, physics=True)
    parts = (loop_mse(d, t) + loop_mse(d[0], t[0]) + loop_boundary_mse(d, GRID)
             + loop_mse(loop_residual(d, TIMES, GRID, 100.0), 0.0))
    assert abs(total.item() - parts) < 1e-12
    assert abs(total.item() - sum(terms.values())) < 1e-12


@pytest.mark.parametrize("term", ["data", "residual", "ic", "bc"])
def test_total_loss_linear_in_each_weight(term):
    d, t = _fields()
    vals = {}
    for a in (0.0, 1.0, 2.5):
        w = LossWeights(**{term: a})
        vals[a] = total_loss(Tensor(d), t, TIMES, GRID, 100.0, w, physics=True)[0].item()
    slope = vals[1.0] - vals[0.0]
    assert vals[2.5] == pytest.approx(vals[0.0] + 2.5 * slope, rel=1e-12)


def test_finetune_loss_examples():
    d, _ = _fields()
    ic = initial_condition(GRID)
    w = FineTuneWeights(residual=0.0, ic=1.0, bc=1.0)
    total, _ = finetune_loss(Tensor(d), GRID, TIMES, 50.0, w, ic)
    assert total.item() == ic_loss(index(Tensor(d), 0), ic).item() + bc_loss(Tensor(d), GRID).item()
    w = FineTuneWeights(residual=1e-4, ic=1.0, bc=1.0)
    total, _ = finetune_loss(Tensor(d), GRID, TIMES, 50.0, w, ic)
    want = (1e-4 * loop_mse(loop_residual(d, TIMES, GRID, 50.0), 0.0) + loop_mse(d[0], ic)
            + loop_boundary_mse(d, GRID))
    assert abs(total.item() - want) < 1e-12


def test_subsampled_residual_is_seeded():
    d, _ = _fields()
    a = residual_loss(Tensor(d), TIMES, GRID, 50.0, fraction=0.5, rng=np.random.default_rng(0)).item()
    b = residual_loss(Tensor(d), TIMES, GRID, 50.0, fraction=0.5, rng=np.random.default_rng(0)).item()
    assert a == b
    with pytest.raises(ContractError):
        residual_loss(Tensor(d), TIMES, GRID, 50.0, fraction=0.5)


def test_negative_weights_rejected():
    with pytest.raises(ContractError):
        LossWeights(data=-1.0)
    with pytest.raises(ContractError):
        FineTuneWeights(ic=-0.5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), mu=st.floats(1.0, 1e5))
def test_terms_are_non_negative_and_vanish_at_fixed_points(seed, mu):
    rng = np.random.default_rng(seed)
    d, t = rng.normal(size=(2, 4, 2, 5, 6))
    times = TIMES[:4]
    _, terms = total_loss(Tensor(d), t, times, GRID, mu, LossWeights(), physics=True)
    assert all(v >= 0.0 for v in terms.values())
    _, same = total_loss(Tensor(t), t, times, GRID, mu, LossWeights())
    assert same["data"] == 0.0 and same["ic"] == 0.0
    zero = np.zeros_like(d)
    _, z = total_loss(Tensor(zero), zero, times, GRID, mu, LossWeights(), physics=True)
    assert z["residual"] == 0.0 and z["bc"] == 0.0


def _toy_model(kind, seed, physics=True):
    cfg = TrainConfig(physics=physics, seed=seed, latent_init_std=0.3,
                      latent=LatentConfig(kind=kind, latent_dim=2, hidden=5, depth=2, rank=2, hyper_hidden=3),
                      decoder=DecoderConfig(depth=2, width=3, omega_max=4.0, latent_dim=2))
    return RomModel(cfg, None, [30.0, 300.0])


@pytest.mark.parametrize("kind", ["NODE", "PNODE", "HyperPNODE"])
def test_total_loss_gradients_on_toy(kind):
    grid = GridSpec(4, 4)
    times = np.linspace(0.0, 0.4, 5)
    model = _toy_model(kind, 1)
    if kind == "HyperPNODE":
        # the Frobenius penalty has a kink at exactly orthonormal factors; step off it
        for p in model.dynamics.net.U + model.dynamics.net.V:
            p.data += np.random.default_rng(0).normal(size=p.shape) * 0.1
    truth = np.random.default_rng(2).normal(size=(5, 2, 4, 4)) * 0.2
    w = LossWeights(data=1.0, residual=1e-2, ic=1.0, bc=1.0, rho1=1e-2, rho2=1e-2)

    def fn():
        decoded = forward_pass(model, 100.0, grid, times)
        return total_loss(decoded, truth, times, grid, 100.0, w, model.dynamics, physics=True)[0]

    assert_gradients(fn, model.parameters(), rtol=1e-4)


TERMS = ["data", "residual", "ic", "bc", "finetune"]


@pytest.mark.parametrize("term", TERMS)
@pytest.mark.parametrize("seed", range(10))
def test_each_loss_term_gradient(term, seed):
    rng = np.random.default_rng(seed)
    u = Parameter(rng.normal(size=(4, 2, 4, 5)) * 0.5, "u")
    truth = rng.normal(size=(4, 2, 4, 5))
    grid, times = GridSpec(5, 4), np.linspace(0.0, 0.3, 4)
    fns = {
        "data": lambda: data_loss(u, truth),
        "residual": lambda: residual_loss(u, times, grid, 20.0),
        "ic": lambda: ic_loss(index(u, 0), truth[0]),
        "bc": lambda: bc_loss(u, grid),
        "finetune": lambda: finetune_loss(u, grid, times, 20.0, FineTuneWeights(1e-2, 1.0, 1.0), truth[0])[0],
    }
    assert_gradients(fns[term], [u])


def test_upwind_residual_gradient():
    rng = np.random.default_rng(11)
    u = Parameter(rng.normal(size=(4, 2, 4, 5)), "u")
    fn = lambda: residual_loss(u, np.linspace(0, 0.3, 4), GridSpec(5, 4), 20.0, advection="upwind")
    assert_gradients(fn, [u])
