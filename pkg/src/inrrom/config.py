"""Run configuration: one JSON document, schema-checked against dataclasses."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .fom import FomConfig, GridSpec
from .trainer import FineTuneConfig, TrainConfig

DEFAULT_TRAIN_PARAMS = [30.0, 50.0, 100.0, 500.0, 1000.0, 2000.0, 5000.0, 10000.0, 30000.0, 50000.0]
DEFAULT_TEST_PARAMS = [20.0, 300.0, 20000.0, 60000.0]


class ConfigError(ValueError):
    pass


@dataclass
class FomSettings:
    nx: int = 64
    ny: int = 64
    x_range: tuple[float, float] = (-3.0, 3.0)
    y_range: tuple[float, float] = (-3.0, 3.0)
    dt: float = 1.0 / 1000.0
    t_final: float = 1.0
    snapshot_stride: int = 20
    newton_tol: float = 1e-10
    newton_max_iters: int = 20

    def grid(self) -> GridSpec:
        return GridSpec(self.nx, self.ny, tuple(self.x_range), tuple(self.y_range))

    def fom_config(self, reynolds: float = 100.0) -> FomConfig:
        return FomConfig(self.grid(), self.dt, self.t_final, reynolds, self.snapshot_stride,
                         self.newton_tol, self.newton_max_iters)


@dataclass
class Paths:
    dataset: str = "runs/dataset.inrrom"
    checkpoint_dir: str = "runs/checkpoints"
    log_dir: str = "runs/logs"
    metrics: str = "runs/metrics.csv"
    export_dir: str = "runs/export"


@dataclass
class ExportConfig:
    snapshots: list[int] = field(default_factory=lambda: [0, -1])
    component: int = 0
    params: list[float] = field(default_factory=list)  # empty -> every parameter in the dataset


@dataclass
class RunConfig:
    name: str = "burgers2d"
    paths: Paths = field(default_factory=Paths)
    fom: FomSettings = field(default_factory=FomSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: FineTuneConfig = field(default_factory=FineTuneConfig)
    train_params: list[float] = field(default_factory=lambda: list(DEFAULT_TRAIN_PARAMS))
    test_params: list[float] = field(default_factory=lambda: list(DEFAULT_TEST_PARAMS))
    export: ExportConfig = field(default_factory=ExportConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def all_params(self) -> list[float]:
        seen = []
        for p in self.train_params + self.test_params:
            if float(p) not in seen:
                seen.append(float(p))
        return seen


def from_dict(cls, data, path: str = ""):
    """Build dataclass ``cls`` from plain data, rejecting unknown keys at any depth."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or cls.__name__}: unknown key(s) {unknown}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(hints[key], value, f"{path}.{key}" if path else key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path or cls.__name__}: {err}") from err


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, path)
    if origin is typing.Union or str(origin) == "types.UnionType":
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        item = args[0] if args else typing.Any
        items = [_coerce(item, v, f"{path}[{i}]") for i, v in enumerate(value)]
        return tuple(items) if origin is tuple else items
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def load_run_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from err
    return from_dict(RunConfig, data)


def train_config_from_dict(d: dict) -> TrainConfig:
    return from_dict(TrainConfig, d)
