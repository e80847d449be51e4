import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _gradcheck import assert_gradients
from inrrom.latent import (
    LatentConfig,
    LatentDynamics,
    LowRankMlp,
    MuScaling,
    count_parameters,
    integrate,
    orthogonality_penalty,
    rk4_step,
)
from inrrom.nn import DenseMlp, dense_count
from inrrom.tensor import ContractError, Parameter, Tensor, hadamard

# forecaster sizes reported for the reference experiment; our architecture reading differs
REFERENCE_COUNTS = {"NODE": 209128, "PNODE": 209641, "HyperPNODE": 165509}

SMALL = dict(latent_dim=2, hidden=8, depth=3, rank=4, hyper_hidden=5)


def _zero(model):
    for p in model.parameters():
        p.data[...] = 0.0


@pytest.mark.parametrize("kind", ["NODE", "PNODE", "HyperPNODE"])
def test_zero_weights_give_zero_velocity(kind):
    m = LatentDynamics(LatentConfig(kind=kind, **SMALL), np.random.default_rng(0))
    _zero(m)
    u = Tensor(np.random.default_rng(1).normal(size=(1, 4)))
    assert not np.any(m.velocity(u, 0.3, m.conditioning(0.7)).data)


def test_node_ignores_the_parameter():
    m = LatentDynamics(LatentConfig(kind="NODE", **SMALL), np.random.default_rng(0))
    u = Tensor(np.random.default_rng(1).normal(size=(1, 4)))
    a = m.velocity(u, 0.2, m.conditioning(-1.0)).data
    b = m.velocity(u, 0.2, m.conditioning(2.5)).data
    assert a.tobytes() == b.tobytes()


def test_pnode_depends_on_the_parameter():
    m = LatentDynamics(LatentConfig(kind="PNODE", **SMALL), np.random.default_rng(0))
    u = Tensor(np.ones((1, 4)))
    assert not np.array_equal(m.velocity(u, 0.0, -1.0).data, m.velocity(u, 0.0, 1.0).data)


def _svd_twin(n_in, n_out, hidden, depth, seed):
    rng = np.random.default_rng(seed)
    dense = DenseMlp([n_in] + [hidden] * depth + [n_out], rng)
    low = LowRankMlp(n_in, n_out, hidden, depth, hidden, rng)
    low.W_first.data[...] = dense.weights[0].data
    low.b_first.data[...] = dense.biases[0].data
    diagonals = []
    for l in range(depth - 1):
        W = dense.weights[l + 1].data  # row convention: h @ W
        U, s, Vt = np.linalg.svd(W.T)  # column convention: W^T h = U diag(s) V^T h
        low.U[l].data[...] = U
        low.V[l].data[...] = Vt.T
        low.b[l].data[...] = dense.biases[l + 1].data
        diagonals.append(Tensor(s[None, :]))
    low.W_last.data[...] = dense.weights[-1].data
    low.b_last.data[...] = dense.biases[-1].data
    return dense, low, diagonals


def test_full_rank_svd_matches_dense():
    dense, low, diag = _svd_twin(101, 100, 256, 3, 0)
    x = Tensor(np.random.default_rng(5).normal(size=(3, 101)))
    np.testing.assert_allclose(low(x, diag).data, dense(x).data, rtol=0, atol=1e-10)


def test_rk4_with_zero_velocity_is_identity():
    u = Tensor([[1.0, -2.0]])
    assert np.array_equal(rk4_step(lambda v, t: v * 0.0, u, 0.0, 0.1).data, u.data)


def test_rk4_single_step_exponential():
    out = rk4_step(lambda v, t: -v, Tensor([[1.0]]), 0.0, 0.1).item()
    assert abs(out - math.exp(-0.1)) < 1e-7


def _decay_error(n):
    times = np.linspace(0.0, 1.0, n + 1)
    traj = integrate(lambda v, t: -v, Tensor([[1.0]]), times)
    return abs(traj.data[-1, 0] - math.exp(-1.0))


def test_rk4_fourth_order():
    errs = [_decay_error(n) for n in (5, 10, 20, 40)]
    for a, b in zip(errs[:-1], errs[1:]):
        assert 14.0 <= a / b <= 18.0


def test_integrate_counts_and_trivial_cases():
    calls = []

    def f(v, t):
        calls.append(t)
        return v * 0.0

    u0 = Tensor([[0.5, 1.5]])
    assert integrate(f, u0, [0.0]).data.tolist() == [[0.5, 1.5]]
    traj = integrate(f, u0, np.linspace(0, 1, 51))
    assert len(calls) == 4 * 50
    assert np.all(traj.data == u0.data)
    with pytest.raises(ContractError):
        integrate(f, u0, [0.0, 0.5, 0.4])


def test_zero_model_gives_constant_trajectory():
    m = LatentDynamics(LatentConfig(kind="HyperPNODE", **SMALL), np.random.default_rng(0))
    _zero(m)
    u0 = Tensor(np.arange(4.0)[None, :])
    traj = m.trajectory(u0, np.linspace(0, 1, 6), 100.0)
    assert np.all(traj.data == u0.data)


def test_orthogonality_penalty_closed_forms():
    m = LatentDynamics(LatentConfig(kind="HyperPNODE", latent_dim=2, hidden=8, depth=2, rank=4),
                       np.random.default_rng(0))
    assert orthogonality_penalty(m, 0.3, 0.7).item() < 1e-14
    m.net.U[0].data *= 2.0
    assert orthogonality_penalty(m, 0.3, 0.7).item() == pytest.approx(0.3 * 3.0 * math.sqrt(4), rel=1e-12)
    before = orthogonality_penalty(m, 0.3, 0.7).item()
    m.net.b[0].data[...] = 42.0
    assert orthogonality_penalty(m, 0.3, 0.7).item() == before


def test_parameter_counts():
    assert dense_count([256, 256]) == 65792
    default = {k: count_parameters(LatentConfig(kind=k)) for k in REFERENCE_COUNTS}
    assert default["HyperPNODE"] < default["PNODE"]
    assert default["NODE"] < default["PNODE"]
    # same order of magnitude as the reference table, not identical
    for k, ref in REFERENCE_COUNTS.items():
        assert 0.3 < default[k] / ref < 3.0


@pytest.mark.parametrize("kind", ["NODE", "PNODE", "HyperPNODE"])
def test_count_matches_built_model(kind):
    cfg = LatentConfig(kind=kind, latent_dim=3, hidden=10, depth=3, rank=4, hyper_hidden=6)
    assert LatentDynamics(cfg, np.random.default_rng(0)).num_parameters() == count_parameters(cfg)


def test_hyper_diagonals_are_pure_in_mu():
    m = LatentDynamics(LatentConfig(kind="HyperPNODE", **SMALL), np.random.default_rng(0))
    a, b = m.conditioning(0.4), m.conditioning(0.4)
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a, b))


def test_mu_scaling_standardizes_logs():
    s = MuScaling.fit([10.0, 1000.0])
    assert s.encode(10.0) == pytest.approx(-1.0) and s.encode(1000.0) == pytest.approx(1.0)
    assert s.encode(100.0) == pytest.approx(0.0)


def test_gradient_through_fifty_step_integration():
    m = LatentDynamics(LatentConfig(kind="PNODE", latent_dim=2, hidden=6, depth=2), np.random.default_rng(3))
    u0 = Parameter(np.random.default_rng(4).normal(size=(1, 4)) * 0.5, "u0")
    target = Tensor(np.random.default_rng(5).normal(size=(51, 4)))
    fn = lambda: (m.trajectory(u0, np.linspace(0, 1, 51), 200.0) - target).square().mean()
    assert_gradients(fn, [u0], rtol=1e-4)


@pytest.mark.parametrize("seed", range(10))
def test_low_rank_layer_gradients(seed):
    rng = np.random.default_rng(seed)
    net = LowRankMlp(3, 2, 5, 3, 3, rng)
    diag = [Parameter(rng.normal(size=(1, 3)), f"s{l}") for l in range(2)]
    x = Tensor(rng.normal(size=(4, 3)))
    cot = Tensor(rng.normal(size=(4, 2)))
    assert_gradients(lambda: hadamard(net(x, diag), cot).sum(), net.parameters() + diag)


@pytest.mark.parametrize("seed", range(10))
def test_rk4_step_gradients(seed):
    rng = np.random.default_rng(seed)
    net = DenseMlp([3, 6, 3], rng)
    u = Parameter(rng.normal(size=(1, 3)), "u")
    cot = Tensor(rng.normal(size=(1, 3)))
    fn = lambda: hadamard(rk4_step(lambda v, t: net(v), u, 0.0, 0.2), cot).sum()
    assert_gradients(fn, net.parameters() + [u])


@pytest.mark.parametrize("seed", range(3))
def test_hyper_pnode_trajectory_gradients(seed):
    m = LatentDynamics(LatentConfig(kind="HyperPNODE", latent_dim=2, hidden=5, depth=3, rank=2, hyper_hidden=3),
                       np.random.default_rng(seed), MuScaling(2.0, 1.0))
    u0 = Parameter(np.random.default_rng(seed + 10).normal(size=(1, 4)), "u0")
    fn = lambda: m.trajectory(u0, np.linspace(0, 0.5, 4), 300.0).square().sum()
    assert_gradients(fn, m.parameters() + [u0])


@settings(max_examples=20, deadline=None)
@given(h=st.floats(1e-3, 0.5), u=st.floats(-10, 10))
def test_rk4_matches_taylor_polynomial_on_linear_decay(h, u):
    # for u' = -u one RK4 step multiplies by the degree-4 Taylor polynomial of exp(-h)
    factor = 1 - h + h ** 2 / 2 - h ** 3 / 6 + h ** 4 / 24
    got = rk4_step(lambda v, t: -v, Tensor([[u]]), 0.0, h).item()
    assert got == pytest.approx(u * factor, rel=1e-12, abs=1e-14)
