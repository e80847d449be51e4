"""Desk-scale training study: four forecasters on a 32x32 grid, then physics-only fine-tuning.

Artifacts land in one directory and are keyed by a hash of the settings that
produced them, so a rerun with unchanged settings reuses the dataset and the
trained checkpoints and only recomputes metrics.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .decoder import DecoderConfig
from .fom import FomConfig, GridSpec, generate_dataset
from .io import load_model, read_dataset, save_model, write_dataset, write_metrics
from .latent import LatentConfig
from .losses import FineTuneWeights, LossWeights
from .trainer import FineTuneConfig, Metrics, TrainConfig, evaluate, finetune, predict, relative_error, train

log = logging.getLogger(__name__)

MODELS = (("NODE", False), ("PNODE", False), ("HyperPNODE", False), ("HyperPNODE", True))


@dataclass
class ScaledSettings:
    nx: int = 32
    dt: float = 1e-3
    t_final: float = 1.0
    snapshot_stride: int = 40  # 26 snapshots
    train_params: list[float] = field(default_factory=lambda: [30.0, 100.0, 1000.0, 10000.0])
    test_params: list[float] = field(default_factory=lambda: [300.0, 20000.0])
    latent_dim: int = 16
    hidden: int = 64
    depth: int = 3
    rank: int = 16
    hyper_hidden: int = 16
    decoder_width: int = 32
    decoder_depth: int = 3
    omega_max: float = 16.0
    epochs: int = 3000
    lr_decoder: float = 0.01
    lr_other: float = 0.001
    residual_weight: float = 1e-4
    advection: str = "upwind"
    seed: int = 0
    finetune_steps: int = 300
    finetune_lr: float = 1e-4
    finetune_residual_weight: float = 1e-2  # brings the weighted residual level with IC + BC after training
    finetune_fraction: float = 0.5
    finetune_seeds: list[int] = field(default_factory=lambda: [0, 1, 2])

    def grid(self) -> GridSpec:
        return GridSpec(self.nx, self.nx)

    def fom(self) -> FomConfig:
        return FomConfig(self.grid(), self.dt, self.t_final, snapshot_stride=self.snapshot_stride)

    def train_config(self, kind: str, physics: bool) -> TrainConfig:
        latent = LatentConfig(kind=kind, latent_dim=self.latent_dim, hidden=self.hidden, depth=self.depth,
                              rank=self.rank, hyper_hidden=self.hyper_hidden)
        decoder = DecoderConfig(depth=self.decoder_depth, width=self.decoder_width, omega_max=self.omega_max,
                                latent_dim=self.latent_dim)
        return TrainConfig(physics=physics, epochs=self.epochs, lr_decoder=self.lr_decoder, lr_other=self.lr_other,
                           weights=LossWeights(residual=self.residual_weight), seed=self.seed, latent=latent,
                           decoder=decoder, advection=self.advection)

    def finetune_config(self, seed: int) -> FineTuneConfig:
        return FineTuneConfig(steps=self.finetune_steps, lr_decoder=self.finetune_lr, lr_hyper=self.finetune_lr,
                              weights=FineTuneWeights(residual=self.finetune_residual_weight), advection=self.advection,
                              fraction=self.finetune_fraction, seed=seed)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:12]


def dataset_path(out: Path, s: ScaledSettings) -> Path:
    key = _digest([s.nx, s.dt, s.t_final, s.snapshot_stride, s.train_params + s.test_params])
    return out / f"dataset-{key}.inrrom"


def checkpoint_path(out: Path, cfg: TrainConfig, params: list[float]) -> Path:
    return out / f"{cfg.name.replace('+', '_')}-{_digest([cfg.to_dict(), params])}.ckpt"


def load_or_generate(out: Path, s: ScaledSettings, workers: int = 1):
    path = dataset_path(out, s)
    if path.exists():
        return read_dataset(path)
    log.info("generating dataset %s", path)
    ds = generate_dataset(s.grid(), s.fom(), s.train_params + s.test_params, workers)
    write_dataset(path, ds)
    return ds


def load_or_train(out: Path, s: ScaledSettings, dataset, kind: str, physics: bool):
    cfg = s.train_config(kind, physics)
    train_set = dataset.subset(s.train_params)
    path = checkpoint_path(out, cfg, s.train_params)
    if path.exists():
        model, _, manifest = load_model(path)
        if manifest["epoch"] == cfg.epochs:
            return model, manifest.get("extra", {}).get("train_seconds")
    log.info("training %s -> %s", cfg.name, path)
    start = time.perf_counter()
    log_path = path.with_suffix(".log.csv")
    result = train(train_set, cfg, log_path=log_path)
    seconds = time.perf_counter() - start
    save_model(path, result.model, result.optimizer, result.epoch, extra={"train_seconds": seconds})
    return result.model, seconds


@dataclass
class ModelReport:
    name: str
    parameters: int
    forecaster_parameters: int
    train: Metrics
    test: Metrics
    train_seconds: float | None


@dataclass
class FineTuneReport:
    model: str
    mu: float
    before: float
    after: list[float]
    seeds: list[int]
    seconds: float

    @property
    def best_relative_gain(self) -> float:
        return max((self.before - a) / self.before for a in self.after)


def run_models(out, s: ScaledSettings | None = None, workers: int = 1) -> tuple[object, dict[str, ModelReport]]:
    s = s or ScaledSettings()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_or_generate(out, s, workers)
    reports = {}
    for kind, physics in MODELS:
        model, seconds = load_or_train(out, s, ds, kind, physics)
        name = model.cfg.name
        tr = evaluate(model, ds, s.train_params)
        te = evaluate(model, ds, s.test_params)
        stem = name.replace("+", "_")
        write_metrics(out / f"metrics-{stem}-train.csv", tr, "train")
        write_metrics(out / f"metrics-{stem}-test.csv", te, "test")
        reports[name] = ModelReport(name, model.num_parameters(), model.dynamics.num_parameters(), tr, te, seconds)
        log.info("%s: train avg %.4g, test avg %.4g", name, tr.avg_error, te.avg_error)
    return ds, reports


def run_finetune(out, ds, s: ScaledSettings | None = None, name: str = "HyperPNODE+PI") -> FineTuneReport:
    """Fine-tune the physics-trained checkpoint at its worst test parameter, once per seed."""
    s = s or ScaledSettings()
    kind, physics = name.replace("+PI", ""), name.endswith("+PI")
    cfg = s.train_config(kind, physics)
    model, _, _ = load_model(checkpoint_path(Path(out), cfg, s.train_params))
    test = evaluate(model, ds, s.test_params)
    mu = test.worst()
    truth = ds.trajectory(mu)
    before = relative_error(truth, predict(model, mu, ds.grid, ds.times))
    after = []
    start = time.perf_counter()
    for seed in s.finetune_seeds:
        tuned, _ = finetune(model, mu, ds.grid, ds.times, s.finetune_config(seed),
                            log_path=Path(out) / f"finetune-{name.replace('+', '_')}-seed{seed}.csv")
        after.append(relative_error(truth, predict(tuned, mu, ds.grid, ds.times)))
    return FineTuneReport(name, mu, before, after, list(s.finetune_seeds), time.perf_counter() - start)


def summary(s: ScaledSettings, reports: dict[str, ModelReport], ft: FineTuneReport | None = None) -> dict:
    out = {"settings": asdict(s), "models": {}}
    for name, r in reports.items():
        out["models"][name] = {
            "parameters": r.parameters, "forecaster_parameters": r.forecaster_parameters,
            "train_avg": r.train.avg_error, "train_max": r.train.max_error, "train_errors": r.train.errors,
            "test_avg": r.test.avg_error, "test_max": r.test.max_error, "test_errors": r.test.errors,
            "min_speedup": float(np.min(r.test.speedups + r.train.speedups)),
            "train_seconds": r.train_seconds,
        }
    if ft is not None:
        out["finetune"] = {"model": ft.model, "mu": ft.mu, "before": ft.before, "after": ft.after,
                           "seeds": ft.seeds, "seconds": ft.seconds}
    return out
