"""Mini-batch training loop with early stopping on validation loss."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..dataset import Scaler, WindowBatch
from ..kpm import N_FEATURES
from .adam import AdamState, NonFiniteGradient, adam_step
from .checkpoint import Checkpoint
from .model import (
    ModelConfig, NonFiniteActivation, Weights, backward, forward, init_weights, mse_loss,
    predict_normalized,
)

log = logging.getLogger(__name__)

EVAL_BATCH = 1024


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


def evaluate(weights: Weights, batch: WindowBatch, cfg: ModelConfig) -> float:
    """Infer-mode MSE over a whole batch (normalized units)."""
    preds = predict_normalized(batch.inputs, weights, EVAL_BATCH, dtype=np.dtype(cfg.dtype))
    return mse_loss(preds, batch.targets)


def _identity_scaler(dim: int) -> Scaler:
    return Scaler(np.zeros(dim), np.ones(dim), 0.0, 1.0)


def train(cfg: ModelConfig, train_batch: WindowBatch, val_batch: WindowBatch,
          scaler: Optional[Scaler] = None,
          val_loss_fn: Optional[Callable[[Weights, int], float]] = None,
          on_epoch: Optional[Callable[[EpochRecord, Weights], None]] = None,
          ) -> tuple[Checkpoint, list[EpochRecord]]:
    """Fit a model and return the best-validation checkpoint plus history.

    Batches are taken in chronological order (no shuffling). Training stops
    after ``cfg.patience`` consecutive epochs without a strict improvement
    of the best validation loss, or at ``cfg.max_epochs``. ``val_loss_fn``
    replaces the validation pass (used to inject loss sequences).
    """
    if len(train_batch) == 0 or len(val_batch) == 0:
        raise ValueError("train and validation batches must be non-empty")
    for name, batch in (("train", train_batch), ("validation", val_batch)):
        if batch.inputs.shape[1:] != (cfg.lookback, cfg.input_dim):
            raise ValueError(
                f"{name} windows have shape {batch.inputs.shape[1:]}, "
                f"config expects ({cfg.lookback}, {cfg.input_dim})"
            )
    dtype = np.dtype(cfg.dtype)
    weights = init_weights(cfg)
    state = AdamState.zeros(weights)
    dropout_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))

    history: list[EpochRecord] = []
    best_loss = math.inf
    best_weights = weights.copy()
    best_epoch = 0
    stale = 0
    n = len(train_batch)
    for epoch in range(1, cfg.max_epochs + 1):
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            xb = train_batch.inputs[start:start + cfg.batch_size]
            yb = train_batch.targets[start:start + cfg.batch_size]
            try:
                preds, cache = forward(xb, weights, mode="train", dropout_p=cfg.dropout_p,
                                       rng=dropout_rng, dtype=dtype)
                total += mse_loss(preds, yb) * len(yb)
                weights, state = adam_step(weights, backward(cache, yb), state, cfg.learning_rate)
            except (NonFiniteActivation, NonFiniteGradient) as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch at row {start}: {exc}") from exc
        train_loss = total / n

        if val_loss_fn is not None:
            val_loss = float(val_loss_fn(weights, epoch))
        else:
            val_loss = evaluate(weights, val_batch, cfg)
        if not math.isfinite(val_loss) or not math.isfinite(train_loss):
            raise TrainingDiverged(
                f"epoch {epoch}: train loss {train_loss}, validation loss {val_loss}"
            )
        record = EpochRecord(epoch, train_loss, val_loss)
        history.append(record)
        log.info("epoch %d train_loss=%.6f val_loss=%.6f", epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(record, weights)

        if val_loss < best_loss:
            best_loss, best_weights, best_epoch, stale = val_loss, weights.copy(), epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                log.info("early stop after epoch %d (best epoch %d)", epoch, best_epoch)
                break

    ckpt = Checkpoint(
        config=cfg,
        scaler=scaler if scaler is not None else _identity_scaler(N_FEATURES),
        weights=best_weights,
        best_val_loss=best_loss,
        epoch=best_epoch,
    )
    return ckpt, history


def write_history(history: list[EpochRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss)])
