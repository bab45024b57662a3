"""KPM record model, validation and canonical feature encoding.

Every stage of the pipeline (simulator, bus, dataset, xApp) exchanges
``KpmRecord`` values. The feature order in ``FEATURES`` is a fixed contract
shared by training and inference.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

# KPM reporting period; a 60-step lookback is 6 s of history.
REPORT_PERIOD_MS = 100

FEATURES: tuple[str, ...] = (
    "ue_count",
    "latency_ms",
    "prb_avail_ul",
    "prb_total_ul",
    "ul_pkt_success_rate",
    "ul_sdu_volume",
    "ul_throughput",
    "air_if_delay_ms",
    "snr_db",
    "cqi",
)
N_FEATURES = len(FEATURES)
LATENCY_INDEX = FEATURES.index("latency_ms")
CSV_COLUMNS: tuple[str, ...] = ("ts_ms",) + FEATURES

_INT_FIELDS = frozenset({"ts_ms", "ue_count", "prb_avail_ul", "prb_total_ul", "cqi"})


class InvalidRecord(ValueError):
    """Raised when a record that must be valid is not."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("invalid KPM record: " + ", ".join(violations))


@dataclass(frozen=True)
class KpmRecord:
    ts_ms: int
    ue_count: int
    latency_ms: float
    prb_avail_ul: int
    prb_total_ul: int
    ul_pkt_success_rate: float
    ul_sdu_volume: float
    ul_throughput: float
    air_if_delay_ms: float
    snr_db: float
    cqi: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KpmRecord":
        missing = [name for name in CSV_COLUMNS if name not in d]
        if missing:
            raise InvalidRecord([f"{name}: missing" for name in missing])
        kwargs = {}
        for name in CSV_COLUMNS:
            value = d[name]
            if name in _INT_FIELDS:
                as_float = float(value)
                if not as_float.is_integer():
                    raise InvalidRecord([f"{name}: not an integer ({value!r})"])
                kwargs[name] = int(as_float)
            else:
                kwargs[name] = float(value)
        return cls(**kwargs)

    def to_json(self) -> bytes:
        """Canonical UTF-8 JSON body, keys in CSV column order."""
        return json.dumps(self.to_dict(), separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_json(cls, payload: bytes | str) -> "KpmRecord":
        return cls.from_dict(json.loads(payload))


def validate_record(r: KpmRecord) -> list[str]:
    """Return the violated invariants of ``r``; an empty list means valid.

    Each descriptor starts with the offending field name.
    """
    violations: list[str] = []
    for f in fields(r):
        value = getattr(r, f.name)
        if f.name in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                violations.append(f"{f.name}: not an integer")
        elif not math.isfinite(value):
            violations.append(f"{f.name}: not finite")
    if violations:
        return violations

    if r.ts_ms < 0:
        violations.append("ts_ms: negative")
    for name in ("ue_count", "prb_avail_ul"):
        if getattr(r, name) < 0:
            violations.append(f"{name}: negative")
    if r.prb_total_ul < 1:
        violations.append("prb_total_ul: must be >= 1")
    if r.prb_avail_ul > r.prb_total_ul:
        violations.append("prb_avail_ul: exceeds prb_total_ul")
    for name in ("latency_ms", "ul_sdu_volume", "ul_throughput", "air_if_delay_ms"):
        if getattr(r, name) < 0:
            violations.append(f"{name}: negative")
    if not 0.0 <= r.ul_pkt_success_rate <= 1.0:
        violations.append("ul_pkt_success_rate: outside [0, 1]")
    if not 0 <= r.cqi <= 15:
        violations.append("cqi: outside [0, 15]")
    return violations


def is_valid(r: KpmRecord) -> bool:
    return not validate_record(r)


def check_stream_order(records: Iterable[KpmRecord]) -> None:
    """Raise if timestamps do not strictly increase."""
    prev = None
    for i, r in enumerate(records):
        if prev is not None and r.ts_ms <= prev:
            raise InvalidRecord([f"ts_ms: not increasing at row {i} ({r.ts_ms} <= {prev})"])
        prev = r.ts_ms


def to_feature_vector(r: KpmRecord) -> np.ndarray:
    """Encode a valid record as a float64 vector in ``FEATURES`` order."""
    violations = validate_record(r)
    if violations:
        raise InvalidRecord(violations)
    return np.array([float(getattr(r, name)) for name in FEATURES], dtype=np.float64)


def from_feature_vector(ts_ms: int, v: np.ndarray) -> KpmRecord:
    """Inverse of ``to_feature_vector`` (the timestamp is not encoded)."""
    if len(v) != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} values, got {len(v)}")
    kwargs = {"ts_ms": int(ts_ms)}
    for name, value in zip(FEATURES, v):
        kwargs[name] = int(value) if name in _INT_FIELDS else float(value)
    return KpmRecord(**kwargs)


def records_to_matrix(records: Iterable[KpmRecord]) -> np.ndarray:
    rows = [to_feature_vector(r) for r in records]
    if not rows:
        return np.zeros((0, N_FEATURES))
    return np.vstack(rows)


# --- CSV -----------------------------------------------------------------


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(int(value))


def write_csv(records: Iterable[KpmRecord], path: str | Path) -> int:
    """Write records in the canonical CSV layout and return the row count."""
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([_fmt(getattr(r, name)) for name in CSV_COLUMNS])
            n += 1
    return n


def iter_csv(source: str | Path | io.TextIOBase) -> Iterator[KpmRecord]:
    """Yield records from a CSV; columns are matched by header name."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            yield from iter_csv(fh)
        return
    reader = csv.DictReader(source)
    missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or ())]
    if missing:
        raise ValueError(f"CSV is missing columns: {', '.join(missing)}")
    for lineno, row in enumerate(reader, start=2):
        try:
            rec = KpmRecord.from_dict(row)
        except InvalidRecord as exc:
            raise InvalidRecord([f"line {lineno}: {v}" for v in exc.violations]) from None
        except (TypeError, ValueError) as exc:
            raise InvalidRecord([f"line {lineno}: {exc}"]) from None
        violations = validate_record(rec)
        if violations:
            raise InvalidRecord([f"line {lineno}: {v}" for v in violations])
        yield rec


def read_csv(source: str | Path) -> list[KpmRecord]:
    records = list(iter_csv(source))
    check_stream_order(records)
    return records
