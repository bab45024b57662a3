"""Online xApp that forecasts next-step latency from the KPM topic and gates transmissions."""

from __future__ import annotations

import csv
import enum
import logging
import math
import queue
import signal
import threading
import time
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .bus import BusClient, ConsumerCursor, UnknownTopic
from .forecaster import Checkpoint, predict_matrix
from .kpm import N_FEATURES, REPORT_PERIOD_MS, InvalidRecord, KpmRecord, to_feature_vector

log = logging.getLogger(__name__)

FORECAST_LOG_COLUMNS = ("ts_ms", "actual_latency_ms", "predicted_latency_ms", "verdict")


class OutOfOrder(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


class Verdict(str, enum.Enum):
    TRANSMIT = "TRANSMIT"
    DEFER = "DEFER"


@dataclass(frozen=True)
class PolicyConfig:
    threshold_ms: float = 20.0
    hysteresis: float = 0.1

    def __post_init__(self):
        if not self.threshold_ms > 0:
            raise ValueError("threshold_ms must be > 0")
        if not 0.0 <= self.hysteresis < 1.0:
            raise ValueError("hysteresis must be in [0, 1)")

    @property
    def release_ms(self) -> float:
        return self.threshold_ms * (1.0 - self.hysteresis)


@dataclass(frozen=True)
class TxDecision:
    ts_ms: int
    verdict: Verdict
    predicted_latency_ms: float
    threshold_ms: float


@dataclass(frozen=True)
class ForecastEvent:
    ts_ms: int
    actual_latency_ms: Optional[float]
    predicted_latency_ms: Optional[float]
    window_complete: bool


def decide(pred_ms: float, prev: Optional[TxDecision], policy: PolicyConfig,
           ts_ms: int = 0) -> TxDecision:
    """Two-state hysteresis gate.

    From TRANSMIT (or no history) defer once the prediction exceeds the
    threshold; from DEFER resume only below ``threshold * (1 - hysteresis)``.
    """
    if not math.isfinite(pred_ms):
        raise ValueError(f"prediction must be finite, got {pred_ms}")
    if prev is None or prev.verdict is Verdict.TRANSMIT:
        verdict = Verdict.DEFER if pred_ms > policy.threshold_ms else Verdict.TRANSMIT
    else:
        verdict = Verdict.TRANSMIT if pred_ms < policy.release_ms else Verdict.DEFER
    return TxDecision(ts_ms, verdict, float(pred_ms), policy.threshold_ms)


@dataclass(frozen=True)
class PairedForecast:
    event: ForecastEvent
    decision: TxDecision


class XAppEngine:
    """Per-consumer state around the lookback ring. Not thread-safe."""

    def __init__(self, ckpt: Checkpoint, policy: PolicyConfig = PolicyConfig()):
        if ckpt.config.input_dim != N_FEATURES:
            raise SchemaMismatch(
                f"checkpoint input_dim {ckpt.config.input_dim} != {N_FEATURES} KPM features"
            )
        self.ckpt = ckpt
        self.policy = policy
        self.lookback = ckpt.config.lookback
        self._window: deque[np.ndarray] = deque(maxlen=self.lookback)
        self._last_ts: Optional[int] = None
        self._pending: Optional[PairedForecast] = None
        self.last_decision: Optional[TxDecision] = None
        self.completed: list[PairedForecast] = []

    @property
    def pending(self) -> Optional[PairedForecast]:
        return self._pending

    def ingest(self, record: KpmRecord) -> ForecastEvent:
        """Add one report and return the event it produces.

        The previous forecast (if any) is paired with this report's latency
        and appended to ``completed``.
        """
        if self._last_ts is not None and record.ts_ms <= self._last_ts:
            raise OutOfOrder(f"ts_ms {record.ts_ms} does not follow {self._last_ts}")
        vec = to_feature_vector(record)
        self._last_ts = record.ts_ms

        if self._pending is not None:
            done = replace(self._pending.event, actual_latency_ms=record.latency_ms)
            self.completed.append(PairedForecast(done, self._pending.decision))
            self._pending = None

        self._window.append(vec)
        if len(self._window) < self.lookback:
            return ForecastEvent(record.ts_ms, None, None, False)
        pred = float(predict_matrix(self.ckpt, np.stack(self._window)[None])[0])
        target_ts = record.ts_ms + REPORT_PERIOD_MS
        event = ForecastEvent(target_ts, None, pred, True)
        decision = decide(pred, self.last_decision, self.policy, target_ts)
        self.last_decision = decision
        self._pending = PairedForecast(event, decision)
        return event

    def drain_completed(self) -> list[PairedForecast]:
        out, self.completed = self.completed, []
        return out


class ForecastLogWriter:
    """Writes paired rows on a worker thread fed by a bounded queue.

    ``put`` blocks when the queue is full, so a slow disk stalls the consumer
    loop instead of dropping rows.
    """

    _STOP = object()

    def __init__(self, path: str | Path, maxsize: int = 1024):
        self.path = Path(path)
        self._queue: queue.Queue = queue.Queue(maxsize=maxsize)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(FORECAST_LOG_COLUMNS)
        self._error: Optional[BaseException] = None
        self._thread = threading.Thread(target=self._run, name="forecast-log", daemon=True)
        self._thread.start()

    def _run(self):
        while True:
            item = self._queue.get()
            if item is self._STOP:
                break
            if self._error is None:
                try:
                    self._writer.writerow(item)
                except OSError as exc:
                    self._error = exc

    def put(self, pf: PairedForecast) -> None:
        ev = pf.event
        self._queue.put([ev.ts_ms, repr(float(ev.actual_latency_ms)),
                         repr(float(ev.predicted_latency_ms)), pf.decision.verdict.value])

    def close(self) -> None:
        self._queue.put(self._STOP)
        self._thread.join()
        self._fh.flush()
        self._fh.close()
        if self._error is not None:
            raise self._error


@dataclass
class OnlineSummary:
    records_consumed: int
    predictions: int
    rows_logged: int
    mae_ms: Optional[float]
    mse_ms: Optional[float]
    mse_normalized: Optional[float]
    mae_normalized: Optional[float]
    defer_count: int
    committed_offset: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def error_metrics(actual, predicted, target_min: float, target_max: float) -> dict:
    """MAE/MSE in milliseconds and in the scaler's normalized units."""
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.size == 0:
        return {"mae_ms": None, "mse_ms": None, "mae_normalized": None, "mse_normalized": None}
    err = p - a
    span = target_max - target_min
    out = {"mae_ms": float(np.mean(np.abs(err))), "mse_ms": float(np.mean(err * err))}
    if span > 0:
        e = err / span
        out["mae_normalized"] = float(np.mean(np.abs(e)))
        out["mse_normalized"] = float(np.mean(e * e))
    else:
        out["mae_normalized"] = out["mse_normalized"] = None
    return out


def read_forecast_log(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def run_online(client: BusClient, topic: str, ckpt: Checkpoint, policy: PolicyConfig,
               out_dir: str | Path, group: str = "xapp",
               producer_done: Optional[threading.Event] = None,
               shutdown: Optional[threading.Event] = None,
               idle_timeout_s: Optional[float] = None,
               poll_max: int = 500, poll_interval_s: float = 0.02,
               install_signal_handlers: bool = True) -> OnlineSummary:
    """Poll -> ingest -> decide -> log -> commit until the stream is done.

    Stops once ``producer_done`` is set and the topic is drained. Setting
    ``shutdown`` (SIGINT and SIGTERM do) stops it early, as does
    ``idle_timeout_s`` without new entries. Rows are flushed and the
    position committed before returning.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shutdown = shutdown or threading.Event()
    engine = XAppEngine(ckpt, policy)
    writer = ForecastLogWriter(out_dir / "forecast_log.csv")
    cursor = ConsumerCursor(topic, group)

    old_handlers = {}
    if install_signal_handlers and threading.current_thread() is threading.main_thread():
        for sig in (signal.SIGINT, signal.SIGTERM):
            old_handlers[sig] = signal.signal(sig, lambda *_: shutdown.set())

    actual, predicted = [], []
    consumed = predictions = defers = 0
    next_offset: Optional[int] = None
    last_data = time.monotonic()
    try:
        while not shutdown.is_set():
            try:
                if next_offset is None:
                    entries = client.poll_group(topic, group, poll_max)
                    if entries:
                        next_offset = entries[0][0]
                else:
                    entries = client.poll(topic, next_offset, poll_max)
            except UnknownTopic:
                entries = []
            if not entries:
                if producer_done is not None and producer_done.is_set():
                    # one more poll after the producer finished guarantees the tail was seen
                    if next_offset is None:
                        try:
                            tail = client.poll_group(topic, group, poll_max)
                        except UnknownTopic:
                            tail = []
                    else:
                        tail = client.poll(topic, next_offset, poll_max)
                    if not tail:
                        break
                    continue
                if idle_timeout_s is not None and time.monotonic() - last_data > idle_timeout_s:
                    log.info("no new entries for %.1f s, stopping", idle_timeout_s)
                    break
                time.sleep(poll_interval_s)
                continue
            last_data = time.monotonic()
            for offset, body in entries:
                try:
                    record = KpmRecord.from_json(body)
                except (InvalidRecord, ValueError, KeyError) as exc:
                    raise SchemaMismatch(f"offset {offset}: not a KPM record ({exc})") from exc
                event = engine.ingest(record)
                consumed += 1
                if event.window_complete:
                    predictions += 1
                for pf in engine.drain_completed():
                    writer.put(pf)
                    actual.append(pf.event.actual_latency_ms)
                    predicted.append(pf.event.predicted_latency_ms)
                    defers += pf.decision.verdict is Verdict.DEFER
            next_offset = entries[-1][0] + 1
            cursor = client.commit(cursor, next_offset)
    finally:
        writer.close()
        for sig, handler in old_handlers.items():
            signal.signal(sig, handler)
    if next_offset is not None:
        cursor = client.commit(cursor, next_offset)

    metrics = error_metrics(actual, predicted, ckpt.scaler.target_min, ckpt.scaler.target_max)
    return OnlineSummary(
        records_consumed=consumed,
        predictions=predictions,
        rows_logged=len(actual),
        defer_count=defers,
        committed_offset=cursor.committed_offset,
        **metrics,
    )
