"""Binary dataset/checkpoint containers, metrics CSV and PPM heatmaps.

Both containers are ``magic (8 bytes) | u32 LE header length | JSON header |
float64 LE payload``. JSON is written with sorted keys and no whitespace so
write -> read -> write reproduces the file byte for byte.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .fom import Dataset, GridSpec
from .latent import MuScaling
from .optim import Adam, ParamGroup

DATASET_MAGIC = b"INRROM1\0"
CHECKPOINT_MAGIC = b"INRCKPT1"
_LE_F64 = np.dtype("<f8")


class FormatError(IOError):
    pass


def _dump(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _write_container(path, magic: bytes, header: dict, payload: bytes) -> None:
    head = _dump(header)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(payload)


def _read_container(path, magic: bytes) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:8] != magic:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}, expected {magic!r}")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    (n,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise FormatError(f"{path}: unreadable header ({err})") from err
    return header, raw[12 + n:]


def write_dataset(path, ds: Dataset) -> None:
    header = {
        "grid": ds.grid.to_dict(),
        "times": [float(t) for t in ds.times],
        "params": [float(p) for p in ds.params],
        "components": list(ds.components),
        "fom_seconds": [float(s) for s in ds.fom_seconds],
        "config": ds.config,
    }
    _write_container(path, DATASET_MAGIC, header, np.ascontiguousarray(ds.states, dtype=_LE_F64).tobytes())


def read_dataset(path) -> Dataset:
    header, payload = _read_container(path, DATASET_MAGIC)
    grid = GridSpec.from_dict(header["grid"])
    shape = (len(header["params"]), len(header["times"]), len(header["components"]), grid.ny, grid.nx)
    expected = 8 * int(np.prod(shape))
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    states = np.frombuffer(payload, dtype=_LE_F64).astype(np.float64).reshape(shape)
    return Dataset(grid, np.array(header["times"], dtype=np.float64), header["params"], states,
                   header["fom_seconds"], tuple(header["components"]), header.get("config", {}))


def write_checkpoint(path, manifest: dict, arrays: list[tuple[str, str, np.ndarray]]) -> None:
    """arrays: (section, name, values); byte offsets are assigned in order."""
    entries, chunks, offset = [], [], 0
    for section, name, arr in arrays:
        data = np.ascontiguousarray(arr, dtype=_LE_F64).tobytes()
        entries.append({"section": section, "name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    manifest = dict(manifest, arrays=entries, payload_bytes=offset)
    _write_container(path, CHECKPOINT_MAGIC, manifest, b"".join(chunks))


def read_checkpoint(path) -> tuple[dict, dict[tuple[str, str], np.ndarray]]:
    manifest, payload = _read_container(path, CHECKPOINT_MAGIC)
    if len(payload) != manifest.get("payload_bytes", -1):
        raise FormatError(f"{path}: payload size mismatch")
    arrays, cursor, seen = {}, 0, set()
    for e in manifest["arrays"]:
        key = (e["section"], e["name"])
        if key in seen:
            raise FormatError(f"{path}: duplicate array {key}")
        if e["offset"] != cursor:
            raise FormatError(f"{path}: array {key} does not tile the payload")
        seen.add(key)
        chunk = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[key] = np.frombuffer(chunk, dtype=_LE_F64).astype(np.float64).reshape(e["shape"])
        cursor += e["nbytes"]
    return manifest, arrays


def save_model(path, model, optimizer: Adam | None = None, epoch: int = 0, extra: dict | None = None) -> None:
    arrays = [("param", name, p.data) for name, p in model.named_parameters()]
    opt_meta = None
    if optimizer is not None:
        opt_meta = {"step": optimizer.step_count, "beta1": optimizer.beta1, "beta2": optimizer.beta2,
                    "eps": optimizer.eps,
                    "groups": [{"name": g.name, "lr": g.lr, "params": [p.name for p in g.params]}
                               for g in optimizer.groups]}
        for p in optimizer.parameters():
            arrays.append(("adam_m", p.name, optimizer.m[p.name]))
        for p in optimizer.parameters():
            arrays.append(("adam_v", p.name, optimizer.v[p.name]))
    manifest = {
        "config": model.cfg.to_dict(),
        "mu_scaling": {"center": model.mu_scaling.center, "scale": model.mu_scaling.scale},
        "train_params": model.train_params,
        "seed": model.cfg.seed,
        "epoch": int(epoch),
        "optimizer": opt_meta,
    }
    if extra:
        manifest["extra"] = extra
    write_checkpoint(path, manifest, arrays)


def load_model(path):
    """Rebuild (model, optimizer or None, manifest) from a checkpoint file."""
    from .config import train_config_from_dict
    from .trainer import RomModel

    manifest, arrays = read_checkpoint(path)
    cfg = train_config_from_dict(manifest["config"])
    model = RomModel(cfg, MuScaling(**manifest["mu_scaling"]), manifest["train_params"])
    model.load_state({name: a for (sec, name), a in arrays.items() if sec == "param"})
    opt = None
    meta = manifest.get("optimizer")
    if meta:
        params = dict(model.named_parameters())
        groups = [ParamGroup(g["name"], [params[n] for n in g["params"]], g["lr"]) for g in meta["groups"]]
        opt = Adam(groups, meta["beta1"], meta["beta2"], meta["eps"], meta["step"],
                   {n: arrays[("adam_m", n)].copy() for n in params if ("adam_m", n) in arrays},
                   {n: arrays[("adam_v", n)].copy() for n in params if ("adam_v", n) in arrays})
    return model, opt, manifest


METRICS_COLUMNS = ("mu", "relative_error", "rom_seconds", "fom_seconds", "speedup")


def write_metrics(path, metrics, label: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(("set",) + METRICS_COLUMNS)
        for mu, err, r, f, s in zip(metrics.params, metrics.errors, metrics.rom_seconds, metrics.fom_seconds,
                                    metrics.speedups):
            out.writerow((label, repr(mu), repr(err), repr(r), repr(f), repr(s)))
        out.writerow((label, "avg", repr(metrics.avg_error), "", "", repr(min(metrics.speedups))))
        out.writerow((label, "max", repr(metrics.max_error), "", "", repr(max(metrics.speedups))))


# viridis anchor colours, linearly interpolated to 256 entries
_VIRIDIS_ANCHORS = np.array([
    [68, 1, 84], [72, 40, 120], [62, 74, 137], [49, 104, 142], [38, 130, 142],
    [31, 158, 137], [53, 183, 121], [110, 206, 88], [181, 222, 43], [253, 231, 37],
], dtype=np.float64)


def colormap() -> np.ndarray:
    pos = np.linspace(0.0, 1.0, len(_VIRIDIS_ANCHORS))
    x = np.linspace(0.0, 1.0, 256)
    return np.stack([np.interp(x, pos, _VIRIDIS_ANCHORS[:, c]) for c in range(3)], axis=1).round().astype(np.uint8)


def write_heatmap(field: np.ndarray, path, meta: dict | None = None) -> dict:
    """Binary PPM (P6), width nx and height ny, with y increasing upwards; sidecar JSON holds the range."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise ValueError(f"heatmap needs a 2D field, got shape {field.shape}")
    if not np.all(np.isfinite(field)):
        raise ValueError("heatmap field contains non-finite values")
    lo, hi = float(field.min()), float(field.max())
    span = hi - lo
    levels = np.zeros(field.shape, dtype=np.int64) if span == 0 else np.clip(
        np.floor((field - lo) / span * 255.0 + 0.5), 0, 255).astype(np.int64)
    rgb = colormap()[levels[::-1]]
    ny, nx = field.shape
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(f"P6\n{nx} {ny}\n255\n".encode("ascii"))
            fh.write(rgb.astype(np.uint8).tobytes())
        side = dict(meta or {}, min=lo, max=hi)
        Path(str(path) + ".json").write_text(json.dumps(side, sort_keys=True, indent=2))
    except OSError as err:
        raise OSError(f"cannot write heatmap {path}: {err}") from err
    return side


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM")
    nx, ny = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(ny, nx, 3)
