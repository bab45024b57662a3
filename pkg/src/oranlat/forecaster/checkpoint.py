"""Checkpoint container, on-disk format and raw-record inference.

File layout: one UTF-8 JSON header line (format tag, version, model
config, scaler, training metadata, tensor names/shapes, payload length and
SHA-256) terminated by ``\\n``, followed by the parameters as flat
little-endian float64 arrays in ``PARAM_NAMES`` order.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..dataset import Scaler
from ..kpm import KpmRecord, InvalidRecord, to_feature_vector
from .model import PARAM_NAMES, ModelConfig, ShapeError, Weights, forward

FORMAT_TAG = "oranlat-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CheckpointMismatch(CheckpointError, ShapeError):
    """The checkpoint does not fit the configuration the caller expects."""


@dataclass
class Checkpoint:
    config: ModelConfig
    scaler: Scaler
    weights: Weights
    best_val_loss: float
    epoch: int

    def predict(self, window: Sequence[KpmRecord]) -> float:
        return predict(self, window)


def predict(ckpt: Checkpoint, window: Sequence[KpmRecord]) -> float:
    """Forecast the next latency (ms) from exactly ``lookback`` raw records."""
    if len(window) != ckpt.config.lookback:
        raise ValueError(f"window has {len(window)} records, lookback is {ckpt.config.lookback}")
    rows = np.vstack([to_feature_vector(r) for r in window])
    return predict_matrix(ckpt, rows[None])[0]


def predict_matrix(ckpt: Checkpoint, raw: np.ndarray) -> np.ndarray:
    """Forecasts (ms) for raw feature windows of shape ``[n, lookback, 10]``."""
    scaled = ckpt.scaler.transform(raw)
    out, _ = forward(scaled, ckpt.weights, mode="infer", dtype=np.dtype(ckpt.config.dtype))
    return ckpt.scaler.unscale_target(out)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    ckpt.weights.check(ckpt.config)
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in ckpt.weights)
    header = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "scaler": ckpt.scaler.to_dict(),
        "best_val_loss": float(ckpt.best_val_loss),
        "epoch": int(ckpt.epoch),
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in ckpt.weights],
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> Checkpoint:
    """Read and verify a checkpoint.

    With ``expect``, architecture fields (units, lookback, input_dim) must
    match or ``CheckpointMismatch`` names the first differing field.
    """
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise CorruptCheckpoint(f"{path}: missing header")
    try:
        header = json.loads(data[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header ({exc})") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_TAG:
        raise CorruptCheckpoint(f"{path}: not an {FORMAT_TAG} file")
    if header.get("version") != FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: format version {header.get('version')}, this build reads {FORMAT_VERSION}"
        )
    payload = data[nl + 1:]
    if len(payload) != header["payload_bytes"]:
        raise CorruptCheckpoint(
            f"{path}: payload is {len(payload)} bytes, header declares {header['payload_bytes']}"
        )
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CorruptCheckpoint(f"{path}: checksum mismatch")

    config = ModelConfig.from_dict(header["config"])
    if expect is not None:
        for name in ("units", "lookback", "input_dim"):
            have, want = getattr(config, name), getattr(expect, name)
            if have != want:
                raise CheckpointMismatch(f"{name}: checkpoint has {have}, expected {want}")

    shapes = config.param_shapes()
    arrays = {}
    offset = 0
    names = [t["name"] for t in header["tensors"]]
    if names != list(PARAM_NAMES):
        raise CorruptCheckpoint(f"{path}: unexpected tensor list {names}")
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        if shape != shapes[t["name"]]:
            raise ShapeError(f"{t['name']}: stored shape {shape}, config implies {shapes[t['name']]}")
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        arrays[t["name"]] = arr.astype(np.float64).reshape(shape)
        offset += 8 * count
    weights = Weights(**arrays)
    weights.check(config)
    return Checkpoint(
        config=config,
        scaler=Scaler.from_dict(header["scaler"]),
        weights=weights,
        best_val_loss=float(header["best_val_loss"]),
        epoch=int(header["epoch"]),
    )


__all__ = [
    "Checkpoint", "CheckpointError", "CheckpointMismatch", "CorruptCheckpoint",
    "InvalidRecord", "VersionMismatch", "load_checkpoint", "predict", "predict_matrix",
    "save_checkpoint",
]
