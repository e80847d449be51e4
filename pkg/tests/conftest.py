import numpy as np
import pytest

from inrrom.decoder import DecoderConfig
from inrrom.fom import FomConfig, GridSpec, generate_dataset
from inrrom.latent import LatentConfig
from inrrom.trainer import TrainConfig


def tiny_train_config(kind="PNODE", epochs=10, physics=False, seed=0, **kw):
    return TrainConfig(
        physics=physics, epochs=epochs, seed=seed,
        latent=LatentConfig(kind=kind, latent_dim=2, hidden=8, depth=2, rank=4, hyper_hidden=4),
        decoder=DecoderConfig(depth=2, width=8, omega_max=8.0, latent_dim=2), **kw)


@pytest.fixture(scope="session")
def tiny_dataset():
    grid = GridSpec(8, 8)
    return generate_dataset(grid, FomConfig(grid, dt=0.01, t_final=0.5, snapshot_stride=5), [30.0, 3000.0])


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def check(number: int, title: str, passed: bool, detail: str = ""):
        ACCEPTANCE[number] = f"criterion {number} [{title}]: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        print(ACCEPTANCE[number])
        assert passed, ACCEPTANCE[number]

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
