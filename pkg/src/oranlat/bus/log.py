"""Append-only topic logs and consumer cursors on local disk.

Each topic is one file of length-prefixed frames (``<topic>.log``); offsets
are frame ordinals. Each (topic, group) cursor lives in a small JSON
sidecar (``<topic>.<group>.cursor``) replaced atomically on commit.

Delivery is at-least-once: a consumer that crashes after processing but
before committing is handed the same entries again on restart.
"""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path

from .framing import HEADER, HEADER_SIZE

MAX_PAYLOAD = 64 * 1024
_NAME = re.compile(r"^[A-Za-z0-9_-][A-Za-z0-9._-]{0,127}$")


class BusError(Exception):
    code = "bus_error"


class EmptyPayload(BusError):
    code = "payload_empty"


class PayloadTooLarge(BusError):
    code = "payload_too_large"


class UnknownTopic(BusError):
    code = "unknown_topic"


class OffsetOutOfRange(BusError):
    code = "offset_out_of_range"


class BadRequest(BusError):
    code = "bad_request"


class StorageError(BusError):
    code = "storage_error"


ERRORS_BY_CODE = {cls.code: cls for cls in
                  (BusError, EmptyPayload, PayloadTooLarge, UnknownTopic, OffsetOutOfRange,
                   BadRequest, StorageError)}


def check_name(kind: str, name: str) -> str:
    if not isinstance(name, str) or not _NAME.match(name):
        raise BadRequest(f"invalid {kind} name {name!r}")
    return name


@dataclass(frozen=True)
class ConsumerCursor:
    topic: str
    group: str
    committed_offset: int = 0

    def to_dict(self) -> dict:
        return {"topic": self.topic, "group": self.group, "committed_offset": self.committed_offset}


class TopicLog:
    """One topic's frame file plus an in-memory offset -> byte index."""

    def __init__(self, path: Path, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()
        self._positions: list[int] = []
        self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT, 0o644)
        self._end = self._recover()

    @property
    def name(self) -> str:
        return self.path.stem

    def __len__(self) -> int:
        return len(self._positions)

    def _recover(self) -> int:
        size = os.fstat(self._fd).st_size
        pos = 0
        while pos + HEADER_SIZE <= size:
            (length,) = HEADER.unpack(os.pread(self._fd, HEADER_SIZE, pos))
            if pos + HEADER_SIZE + length > size:
                break
            self._positions.append(pos)
            pos += HEADER_SIZE + length
        if pos != size:
            # torn tail from an interrupted append; it was never acknowledged
            os.ftruncate(self._fd, pos)
        return pos

    def append(self, payload: bytes) -> int:
        frame = HEADER.pack(len(payload)) + payload
        with self._lock:
            try:
                written = os.pwrite(self._fd, frame, self._end)
                if written != len(frame):
                    raise OSError(f"short write ({written} of {len(frame)} bytes)")
                if self.fsync:
                    os.fsync(self._fd)
            except OSError as exc:
                os.ftruncate(self._fd, self._end)
                raise StorageError(f"{self.path}: {exc}") from exc
            offset = len(self._positions)
            self._positions.append(self._end)
            self._end += len(frame)
            return offset

    def read(self, from_offset: int, max_entries: int) -> list[tuple[int, bytes]]:
        # Entries in the index are already on disk; no lock needed.
        stop = min(len(self._positions), from_offset + max_entries)
        out = []
        for offset in range(from_offset, stop):
            pos = self._positions[offset]
            (length,) = HEADER.unpack(os.pread(self._fd, HEADER_SIZE, pos))
            out.append((offset, os.pread(self._fd, length, pos + HEADER_SIZE)))
        return out

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1


class Broker:
    """Single-node pub/sub over a directory of topic logs."""

    def __init__(self, data_dir: str | Path, fsync: bool = True):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.fsync = fsync
        self._topics: dict[str, TopicLog] = {}
        self._lock = threading.Lock()
        self._cursor_lock = threading.Lock()

    def _topic(self, topic: str, create: bool) -> TopicLog:
        check_name("topic", topic)
        log = self._topics.get(topic)
        if log is not None:
            return log
        with self._lock:
            log = self._topics.get(topic)
            if log is None:
                path = self.data_dir / f"{topic}.log"
                if not create and not path.exists():
                    raise UnknownTopic(f"unknown topic {topic!r}")
                log = TopicLog(path, fsync=self.fsync)
                self._topics[topic] = log
            return log

    def topics(self) -> list[str]:
        return sorted(p.stem for p in self.data_dir.glob("*.log"))

    def end_offset(self, topic: str) -> int:
        return len(self._topic(topic, create=False))

    def publish(self, topic: str, payload: bytes) -> int:
        if not isinstance(payload, (bytes, bytearray)):
            raise BadRequest("payload must be bytes")
        if len(payload) == 0:
            raise EmptyPayload("payload must be non-empty")
        if len(payload) > MAX_PAYLOAD:
            raise PayloadTooLarge(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
        return self._topic(topic, create=True).append(bytes(payload))

    def poll(self, topic: str, from_offset: int, max_entries: int = 500) -> list[tuple[int, bytes]]:
        if not isinstance(from_offset, int) or from_offset < 0:
            raise BadRequest("from_offset must be an integer >= 0")
        if not isinstance(max_entries, int) or max_entries < 0:
            raise BadRequest("max must be an integer >= 0")
        return self._topic(topic, create=False).read(from_offset, max_entries)

    def _cursor_path(self, topic: str, group: str) -> Path:
        return self.data_dir / f"{topic}.{check_name('group', group)}.cursor"

    def committed(self, topic: str, group: str) -> ConsumerCursor:
        path = self._cursor_path(check_name("topic", topic), group)
        if not path.exists():
            return ConsumerCursor(topic, group, 0)
        data = json.loads(path.read_text(encoding="utf-8"))
        return ConsumerCursor(topic, group, int(data["committed_offset"]))

    def commit(self, cursor: ConsumerCursor, offset: int) -> ConsumerCursor:
        """Persist ``offset`` as the next offset the group should read."""
        length = len(self._topic(cursor.topic, create=False))
        if not isinstance(offset, int) or offset < 0:
            raise BadRequest("offset must be an integer >= 0")
        if offset > length:
            raise OffsetOutOfRange(f"offset {offset} is beyond the log end {length}")
        new = ConsumerCursor(cursor.topic, cursor.group, offset)
        path = self._cursor_path(cursor.topic, cursor.group)
        tmp = path.with_name(path.name + ".tmp")
        with self._cursor_lock:
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(new.to_dict(), fh)
                fh.flush()
                if self.fsync:
                    os.fsync(fh.fileno())
            os.replace(tmp, path)
        return new

    def close(self) -> None:
        with self._lock:
            for log in self._topics.values():
                log.close()
            self._topics.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
