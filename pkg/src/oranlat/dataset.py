"""Scaling, chronological splitting and lookback windowing of KPM series."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .kpm import LATENCY_INDEX, N_FEATURES, KpmRecord, read_csv, records_to_matrix

DEFAULT_SPLIT = 0.8
MIN_SIDE_ROWS = 2


@dataclass(frozen=True)
class Scaler:
    """Per-feature min-max scaler plus the latency target range."""

    min: np.ndarray
    max: np.ndarray
    target_min: float
    target_max: float

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Map ``x`` (shape ``[..., 10]``) to the unit range; no clamping."""
        x = np.asarray(x, dtype=np.float64)
        span = self.max - self.min
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (x - self.min) / safe, 0.0)

    def inverse(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return z * (self.max - self.min) + self.min

    def scale_target(self, y):
        span = self.target_max - self.target_min
        if span <= 0:
            return np.zeros_like(np.asarray(y, dtype=np.float64))
        return (np.asarray(y, dtype=np.float64) - self.target_min) / span

    def unscale_target(self, z):
        return np.asarray(z, dtype=np.float64) * (self.target_max - self.target_min) + self.target_min

    def to_dict(self) -> dict:
        return {
            "min": [float(v) for v in self.min],
            "max": [float(v) for v in self.max],
            "target_min": float(self.target_min),
            "target_max": float(self.target_max),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        lo = np.array(d["min"], dtype=np.float64)
        hi = np.array(d["max"], dtype=np.float64)
        if lo.shape != (N_FEATURES,) or hi.shape != (N_FEATURES,):
            raise ValueError(f"scaler must carry {N_FEATURES} min/max values")
        if np.any(hi < lo):
            raise ValueError("scaler max < min")
        return cls(lo, hi, float(d["target_min"]), float(d["target_max"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Scaler":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_scaler(rows: np.ndarray | Sequence[np.ndarray]) -> Scaler:
    """Fit column-wise min/max on training rows only."""
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != N_FEATURES:
        raise ValueError(f"expected rows of {N_FEATURES} features, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError(f"fit_scaler needs at least 2 rows, got {x.shape[0]}")
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    return Scaler(lo, hi, float(lo[LATENCY_INDEX]), float(hi[LATENCY_INDEX]))


def apply_scaler(s: Scaler, v: np.ndarray) -> np.ndarray:
    return s.transform(v)


@dataclass(frozen=True)
class WindowBatch:
    inputs: np.ndarray  # [n, lookback, 10]
    targets: np.ndarray  # [n]

    def __len__(self) -> int:
        return int(self.targets.shape[0])

    @property
    def lookback(self) -> int:
        return int(self.inputs.shape[1])

    def slice(self, start: int, stop: int) -> "WindowBatch":
        return WindowBatch(self.inputs[start:stop], self.targets[start:stop])


def make_windows(series: np.ndarray, lookback: int, horizon: int = 1) -> WindowBatch:
    """Window ``i`` holds rows ``[i, i+lookback)``; its target is the
    normalized latency of row ``i+lookback``.

    Inputs are a read-only strided view of ``series``.
    """
    if horizon != 1:
        raise ValueError("only horizon=1 is supported")
    if lookback < 1:
        raise ValueError("lookback must be >= 1")
    x = np.ascontiguousarray(series, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != N_FEATURES:
        raise ValueError(f"expected series of shape [len, {N_FEATURES}], got {x.shape}")
    n = max(0, x.shape[0] - lookback)
    if n == 0:
        return WindowBatch(np.zeros((0, lookback, N_FEATURES)), np.zeros(0))
    view = np.lib.stride_tricks.sliding_window_view(x[:-1], lookback, axis=0)
    inputs = view.transpose(0, 2, 1)[:n]
    targets = x[lookback:, LATENCY_INDEX].copy()
    return WindowBatch(inputs, targets)


def chronological_split(rows: Sequence, ratio: float = DEFAULT_SPLIT):
    """First ``floor(ratio * len)`` rows train, the remainder validates.

    A side with fewer than 2 rows counts as degenerate.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    k = math.floor(ratio * len(rows))
    if k < MIN_SIDE_ROWS or len(rows) - k < MIN_SIDE_ROWS:
        raise ValueError(f"degenerate split: {k} train / {len(rows) - k} validation rows")
    return rows[:k], rows[k:]


@dataclass(frozen=True)
class PreparedData:
    scaler: Scaler
    train: WindowBatch
    val: WindowBatch


class DatasetTooSmall(ValueError):
    pass


def prepare(records: Sequence[KpmRecord] | np.ndarray, lookback: int,
            ratio: float = DEFAULT_SPLIT) -> PreparedData:
    """Split, fit the scaler on the training part and window both parts."""
    matrix = records if isinstance(records, np.ndarray) else records_to_matrix(records)
    if matrix.shape[0] < 2 * (lookback + 1):
        raise DatasetTooSmall(
            f"{matrix.shape[0]} rows cannot yield train and validation windows "
            f"with lookback={lookback}"
        )
    train_rows, val_rows = chronological_split(matrix, ratio)
    scaler = fit_scaler(train_rows)
    train = make_windows(scaler.transform(train_rows), lookback)
    val = make_windows(scaler.transform(val_rows), lookback)
    if len(train) == 0 or len(val) == 0:
        raise DatasetTooSmall(
            f"split leaves {len(train)} train / {len(val)} validation windows "
            f"with lookback={lookback}"
        )
    return PreparedData(scaler, train, val)


def prepare_csv(path: str | Path, lookback: int, ratio: float = DEFAULT_SPLIT) -> PreparedData:
    return prepare(read_csv(path), lookback, ratio)
