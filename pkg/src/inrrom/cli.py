"""Command-line entry point: generate, train, finetune, evaluate, export.

Every subcommand reads one JSON run config. Failures exit with 2 (config),
3 (solver), 4 (training divergence) or 5 (I/O) and print a single JSON line
``{"exit": code, "kind": ..., "reason": ...}`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config
from .fom import SolverError, generate_dataset
from .io import FormatError, load_model, read_dataset, save_model, write_dataset, write_heatmap, write_metrics
from .tensor import ContractError
from .trainer import TrainingDiverged, evaluate, finetune, predict, train

THREADS_ENV = "INRROM_THREADS"

log = logging.getLogger("inrrom")


class CliError(Exception):
    def __init__(self, code: int, kind: str, reason: str):
        super().__init__(reason)
        self.code, self.kind, self.reason = code, kind, reason


def _workers() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(2, "config", f"{THREADS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise CliError(2, "config", f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _checkpoint_path(cfg: RunConfig, args) -> Path:
    if getattr(args, "checkpoint", None):
        return Path(args.checkpoint)
    return Path(cfg.paths.checkpoint_dir) / f"{cfg.train.name.replace('+', '_')}.ckpt"


def cmd_generate(cfg: RunConfig, args) -> None:
    out = Path(args.out or cfg.paths.dataset)
    ds = generate_dataset(cfg.fom.grid(), cfg.fom.fom_config(), cfg.all_params, _workers())
    ds.config = dict(ds.config, run=cfg.to_dict())
    write_dataset(out, ds)
    print(f"wrote {out} ({len(ds.params)} parameters, {len(ds.times)} snapshots)")


def cmd_train(cfg: RunConfig, args) -> None:
    tc = cfg.train
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    ds = read_dataset(args.dataset or cfg.paths.dataset).subset(cfg.train_params)
    ckpt = _checkpoint_path(replace(cfg, train=tc), args)
    log_path = Path(cfg.paths.log_dir) / f"{tc.name.replace('+', '_')}.csv"
    result = train(ds, tc, log_path=log_path, checkpoint_path=ckpt)
    print(f"wrote {ckpt} after {result.epoch} epochs; log {log_path}")


def cmd_finetune(cfg: RunConfig, args) -> None:
    model, _, _ = load_model(_checkpoint_path(cfg, args))
    ds = read_dataset(args.dataset or cfg.paths.dataset)
    ft = cfg.finetune if args.steps is None else replace(cfg.finetune, steps=args.steps)
    out = Path(args.out) if args.out else Path(cfg.paths.checkpoint_dir) / f"finetuned-mu{args.mu:g}.ckpt"
    log_path = Path(cfg.paths.log_dir) / f"finetune-mu{args.mu:g}.csv"
    tuned, _ = finetune(model, args.mu, ds.grid, ds.times, ft, log_path=log_path)
    save_model(out, tuned, epoch=ft.steps, extra={"finetune": ft.to_dict(), "mu": args.mu})
    print(f"wrote {out}")


def cmd_evaluate(cfg: RunConfig, args) -> None:
    ckpt = _checkpoint_path(cfg, args)
    model, _, _ = load_model(ckpt)
    ds = read_dataset(args.dataset or cfg.paths.dataset)
    params = {"train": cfg.train_params, "test": cfg.test_params, "all": cfg.all_params}[args.set]
    metrics = evaluate(model, ds, params)
    out = Path(args.out or cfg.paths.metrics)
    write_metrics(out, metrics, args.set)
    Path(str(out) + ".config.json").write_text(json.dumps(
        {"checkpoint": str(ckpt), "dataset": str(args.dataset or cfg.paths.dataset), "run": cfg.to_dict()},
        indent=2, sort_keys=True))
    print(f"wrote {out}: avg {metrics.avg_error:.4e}, max {metrics.max_error:.4e}")


def cmd_export(cfg: RunConfig, args) -> None:
    ds = read_dataset(args.dataset or cfg.paths.dataset)
    model = None
    if args.checkpoint or _checkpoint_path(cfg, args).exists():
        model, _, _ = load_model(_checkpoint_path(cfg, args))
    params = args.mu or cfg.export.params or ds.params
    snaps = args.snapshot if args.snapshot is not None else cfg.export.snapshots
    comp = cfg.export.component
    out = Path(args.out or cfg.paths.export_dir)
    n = 0
    for mu in params:
        truth = ds.trajectory(mu)
        pred = predict(model, mu, ds.grid, ds.times) if model is not None else None
        for s in snaps:
            t = float(ds.times[s])
            idx = s % len(ds.times)
            meta = {"mu": mu, "t": t, "snapshot": idx, "component": ds.components[comp]}
            stem = f"mu{mu:g}-s{idx:03d}-{ds.components[comp]}"
            write_heatmap(truth[s, comp], out / f"{stem}-truth.ppm", dict(meta, field="truth"))
            n += 1
            if pred is not None:
                write_heatmap(pred[s, comp], out / f"{stem}-pred.ppm", dict(meta, field="prediction"))
                write_heatmap(np.abs(truth[s, comp] - pred[s, comp]), out / f"{stem}-error.ppm",
                              dict(meta, field="abs_error"))
                n += 2
    print(f"wrote {n} heatmaps to {out}")


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "finetune": cmd_finetune,
            "evaluate": cmd_evaluate, "export": cmd_export}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="inrrom", description="Latent-dynamics ROM toolkit for 2D Burgers")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--out", help="override the output path from the config")
        if name != "generate":
            p.add_argument("--dataset", help="override the dataset path from the config")
        if name in ("finetune", "evaluate", "export"):
            p.add_argument("--checkpoint", help="checkpoint file (default: derived from the config)")
    sub.choices["train"].add_argument("--epochs", type=int)
    sub.choices["finetune"].add_argument("--mu", type=float, required=True)
    sub.choices["finetune"].add_argument("--steps", type=int)
    sub.choices["evaluate"].add_argument("--set", choices=("train", "test", "all"), default="train")
    sub.choices["export"].add_argument("--mu", type=float, action="append")
    sub.choices["export"].add_argument("--snapshot", type=int, action="append")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            cfg = load_run_config(args.config)
        except FileNotFoundError as err:
            raise CliError(5, "io", f"config not found: {err.filename}") from err
        COMMANDS[args.command](cfg, args)
    except CliError as err:
        return _fail(err)
    except (ConfigError, ContractError, KeyError, ValueError) as err:
        return _fail(CliError(2, "config", str(err)))
    except SolverError as err:
        return _fail(CliError(3, "solver", str(err)))
    except TrainingDiverged as err:
        return _fail(CliError(4, "divergence", str(err)))
    except (OSError, FormatError) as err:
        return _fail(CliError(5, "io", str(err)))
    return 0


def _fail(err: CliError) -> int:
    reason = " ".join(err.reason.split())
    print(json.dumps({"exit": err.code, "kind": err.kind, "reason": reason}), file=sys.stderr)
    return err.code


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
