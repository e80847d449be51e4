"""Joint training of latent initial state, latent dynamics and decoder; fine-tuning; metrics."""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .decoder import DecoderConfig, FourierNet, decode_trajectory
from .fom import Dataset, GridSpec, initial_condition
from .latent import LatentConfig, LatentDynamics, MuScaling
from .losses import FineTuneWeights, LossWeights, finetune_loss, total_loss
from .nn import Module
from .optim import Adam, ParamGroup
from .tensor import ContractError, Tape, Tensor, index

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "data", "residual", "ic", "bc", "orth", "total", "wall_seconds")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: "RomModel | None" = None, epoch: int = 0):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch


@dataclass
class TrainConfig:
    physics: bool = False
    epochs: int = 50000
    lr_decoder: float = 0.01
    lr_other: float = 0.001
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    latent: LatentConfig = field(default_factory=LatentConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    checkpoint_every: int = 0
    advection: str = "central"
    latent_ic: str = "shared"  # or "per_mu" for parameter-dependent initial conditions
    latent_init_std: float = 0.01

    def __post_init__(self):
        if self.epochs < 0:
            raise ContractError("epochs must be non-negative")
        if self.latent_ic not in ("shared", "per_mu"):
            raise ContractError(f"latent_ic must be 'shared' or 'per_mu', got {self.latent_ic!r}")
        if (self.decoder.latent_dim, self.decoder.n_components) != (self.latent.latent_dim,
                                                                    self.latent.n_components):
            raise ContractError("decoder latent_dim/n_components must match the latent config")

    @property
    def kind(self) -> str:
        return self.latent.kind

    @property
    def name(self) -> str:
        return self.kind + ("+PI" if self.physics else "")

    def to_dict(self) -> dict:
        return asdict(self)


class RomModel(Module):
    """Latent initial state + latent dynamics + FourierNet decoder."""

    def __init__(self, cfg: TrainConfig, mu_scaling: MuScaling | None = None,
                 train_params: list[float] | None = None):
        super().__init__()
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.train_params = [float(p) for p in (train_params or [])]
        self.mu_scaling = mu_scaling or MuScaling.fit(self.train_params or [1.0])
        self.dynamics = self.child("dynamics", LatentDynamics(cfg.latent, rng, self.mu_scaling))
        self.decoder = self.child("decoder", FourierNet(cfg.decoder, rng))
        rows = len(self.train_params) if cfg.latent_ic == "per_mu" else 1
        if rows < 1:
            raise ContractError("a per-mu latent table needs the training parameters")
        self.latent_ic = self.param("latent_ic", rng.normal(0.0, cfg.latent_init_std,
                                                             (rows, cfg.latent.state_dim)))
        self.finalize_names()

    def initial_latent(self, mu: float) -> Tensor:
        if self.cfg.latent_ic == "shared":
            return self.latent_ic
        logs = np.log10(self.train_params)
        row = int(np.argmin(np.abs(logs - math.log10(mu))))
        return index(self.latent_ic, slice(row, row + 1))

    def groups(self) -> dict[str, list]:
        dec = [p for _, p in self.decoder.named_parameters()]
        dec_ids = {id(p) for p in dec}
        return {"decoder": dec, "other": [p for p in self.parameters() if id(p) not in dec_ids]}

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            raise ContractError(f"state names differ: missing {set(params) - set(state)}, "
                                f"unexpected {set(state) - set(params)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ContractError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)
            p.grad = np.zeros_like(p.data)

    def clone(self) -> "RomModel":
        return copy.deepcopy(self)


def forward_pass(model: RomModel, mu: float, grid: GridSpec, times) -> Tensor:
    """Integrate the latent dynamics from the latent initial state and decode on the grid."""
    latents = model.dynamics.trajectory(model.initial_latent(mu), times, mu)
    return decode_trajectory(model.decoder, latents, grid)


def predict(model: RomModel, mu: float, grid: GridSpec, times) -> np.ndarray:
    return forward_pass(model, mu, grid, times).data


def make_optimizer(model: RomModel, lr_decoder: float, lr_other: float) -> Adam:
    g = model.groups()
    return Adam([ParamGroup("decoder", g["decoder"], lr_decoder), ParamGroup("other", g["other"], lr_other)])


@dataclass
class TrainResult:
    model: RomModel
    optimizer: Adam
    history: list[dict]
    epoch: int


class EpochLog:
    """CSV writer for per-epoch loss terms; the producing config sits next to it as JSON."""

    def __init__(self, path: str | Path | None, config: dict | None = None):
        self.path = Path(path) if path else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(LOG_COLUMNS)
            if config is not None:
                Path(str(self.path) + ".config.json").write_text(json.dumps(config, indent=2, sort_keys=True))

    def append(self, row: dict) -> None:
        if self.path is None:
            return
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow(["" if row.get(c) is None else row.get(c) for c in LOG_COLUMNS])


def _grads_finite(params) -> bool:
    return all(p.grad is None or np.all(np.isfinite(p.grad)) for p in params)


def train(dataset: Dataset, cfg: TrainConfig, model: RomModel | None = None, log_path=None,
          checkpoint_path=None, optimizer: Adam | None = None, start_epoch: int = 0,
          on_epoch=None) -> TrainResult:
    """Adam over one trajectory per step, cycling through every training Reynolds number each epoch."""
    if not dataset.params:
        raise ContractError("cannot train on an empty dataset")
    from .io import save_model

    model = model or RomModel(cfg, MuScaling.fit(dataset.params), dataset.params)
    opt = optimizer or make_optimizer(model, cfg.lr_decoder, cfg.lr_other)
    grid, times = dataset.grid, dataset.times
    epoch_log = EpochLog(log_path, {"train": cfg.to_dict(), "dataset_params": dataset.params})
    history = []
    last_good = model.state()
    start = time.perf_counter()
    epoch = start_epoch
    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        sums: dict[str, float] = {}
        for i, mu in enumerate(dataset.params):
            with Tape() as tape:
                decoded = forward_pass(model, mu, grid, times)
                loss, terms = total_loss(decoded, dataset.states[i], times, grid, mu, cfg.weights, model.dynamics,
                                         physics=cfg.physics, advection=cfg.advection)
                value = loss.item()
                if not math.isfinite(value):
                    model.load_state(last_good)
                    if checkpoint_path:
                        log.error("non-finite loss at epoch %d; keeping checkpoint %s", epoch, checkpoint_path)
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, mu={mu}", model, epoch - 1)
                opt.zero_grad()
                tape.backward(loss)
            if not _grads_finite(model.parameters()):
                model.load_state(last_good)
                raise TrainingDiverged(f"non-finite gradient at epoch {epoch}, mu={mu}", model, epoch - 1)
            opt.step()
            terms["total"] = value
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + v
        row = {k: v / len(dataset.params) for k, v in sums.items()}
        row["epoch"] = epoch
        row["wall_seconds"] = time.perf_counter() - start
        history.append(row)
        epoch_log.append(row)
        last_good = model.state()
        if on_epoch is not None:
            on_epoch(row)
        if checkpoint_path and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_model(checkpoint_path, model, opt, epoch)
    if checkpoint_path:
        save_model(checkpoint_path, model, opt, epoch)
    return TrainResult(model, opt, history, epoch)


@dataclass
class FineTuneConfig:
    steps: int = 300
    lr_decoder: float = 1e-3
    lr_hyper: float = 1e-3
    weights: FineTuneWeights = field(default_factory=FineTuneWeights)
    advection: str = "central"
    fraction: float = 1.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def finetune(model: RomModel, mu: float, grid: GridSpec, times, cfg: FineTuneConfig,
             log_path=None) -> tuple[RomModel, list[dict]]:
    """Physics-only adaptation to an unseen Reynolds number.

    Only decoder (and, for HyperPNODE, hypernetwork) parameters move; no
    ground-truth trajectory is read.
    """
    if cfg.weights.residual <= 0:
        raise ContractError("fine-tuning needs a positive residual weight")
    if not model.cfg.physics:
        log.warning("fine-tuning a checkpoint trained without the physics loss (%s)", model.cfg.name)
    tuned = model.clone()
    trainable = [p for _, p in tuned.decoder.named_parameters()]
    hyper = [p for _, p in tuned.dynamics.hyper.named_parameters()] if tuned.cfg.kind == "HyperPNODE" else []
    keep = {id(p) for p in trainable + hyper}
    frozen = [p for p in tuned.parameters() if id(p) not in keep]
    for p in frozen:
        p.requires_grad = False
    opt = Adam([ParamGroup("decoder", trainable, cfg.lr_decoder), ParamGroup("hyper", hyper, cfg.lr_hyper)])
    rng = np.random.default_rng(cfg.seed)
    true_ic = initial_condition(grid)
    epoch_log = EpochLog(log_path, {"finetune": cfg.to_dict(), "mu": mu, "base": model.cfg.to_dict()})
    history = []
    start = time.perf_counter()
    try:
        for step in range(1, cfg.steps + 1):
            with Tape() as tape:
                decoded = forward_pass(tuned, mu, grid, times)
                loss, terms = finetune_loss(decoded, grid, times, mu, cfg.weights, true_ic, cfg.advection,
                                            cfg.fraction, rng)
                if not math.isfinite(loss.item()):
                    raise TrainingDiverged(f"non-finite fine-tune loss at step {step}", model, step - 1)
                opt.zero_grad()
                tape.backward(loss)
            if not _grads_finite(tuned.parameters()):
                raise TrainingDiverged(f"non-finite fine-tune gradient at step {step}", model, step - 1)
            opt.step()
            row = dict(terms, total=loss.item(), epoch=step, wall_seconds=time.perf_counter() - start)
            history.append(row)
            epoch_log.append(row)
    finally:
        for p in frozen:
            p.requires_grad = True
            p.grad = np.zeros_like(p.data)
    return tuned, history


def relative_error(truth: np.ndarray, approx: np.ndarray) -> float:
    """||u - u~|| / ||u|| in the Frobenius sense over every axis."""
    return float(np.linalg.norm((truth - approx).ravel()) / np.linalg.norm(truth.ravel()))


@dataclass
class Metrics:
    params: list[float]
    errors: list[float]
    rom_seconds: list[float]
    fom_seconds: list[float]

    @property
    def avg_error(self) -> float:
        return float(np.mean(self.errors))

    @property
    def max_error(self) -> float:
        return float(np.max(self.errors))

    @property
    def speedups(self) -> list[float]:
        return [f / r if r > 0 else float("inf") for f, r in zip(self.fom_seconds, self.rom_seconds)]

    def worst(self) -> float:
        return self.params[int(np.argmax(self.errors))]


def evaluate(model: RomModel, dataset: Dataset, params: list[float] | None = None) -> Metrics:
    """Untracked, timed ROM inference per Reynolds number against stored FOM trajectories."""
    params = list(dataset.params if params is None else params)
    errors, rom_t, fom_t = [], [], []
    for mu in params:
        try:
            i = dataset.index_of(mu)
        except KeyError as err:
            raise ContractError(str(err)) from err
        t0 = time.perf_counter()
        approx = predict(model, mu, dataset.grid, dataset.times)
        rom_t.append(time.perf_counter() - t0)
        errors.append(relative_error(dataset.states[i], approx))
        fom_t.append(dataset.fom_seconds[i] if dataset.fom_seconds else float("nan"))
    return Metrics([float(p) for p in params], errors, rom_t, fom_t)
