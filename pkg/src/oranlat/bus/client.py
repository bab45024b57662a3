from __future__ import annotations

import logging
import socket
import threading
import time

from .framing import recv_json, send_json
from .log import ERRORS_BY_CODE, BusError, ConsumerCursor

log = logging.getLogger(__name__)


class BusUnavailable(ConnectionError):
    pass


class BusClient:
    """Blocking client for ``BusServer``.

    Connection attempts back off exponentially (``backoff_s`` doubling, capped
    at ``backoff_cap_s``) for up to ``retries`` tries before raising
    ``BusUnavailable``.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 9701, timeout: float = 10.0,
                 retries: int = 6, backoff_s: float = 0.05, backoff_cap_s: float = 1.0):
        self.host, self.port = host, port
        self.timeout = timeout
        self.retries = retries
        self.backoff_s, self.backoff_cap_s = backoff_s, backoff_cap_s
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()

    def connect(self) -> None:
        delay = self.backoff_s
        last: Exception | None = None
        for attempt in range(1, self.retries + 1):
            try:
                self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
                return
            except OSError as exc:
                last = exc
                log.warning("bus %s:%d unreachable (attempt %d/%d): %s",
                            self.host, self.port, attempt, self.retries, exc)
                if attempt < self.retries:
                    time.sleep(delay)
                    delay = min(delay * 2, self.backoff_cap_s)
        raise BusUnavailable(f"bus {self.host}:{self.port} unreachable: {last}")

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        self.connect()
        return self

    def __exit__(self, *exc):
        self.close()

    def request(self, req: dict) -> dict:
        with self._lock:
            if self._sock is None:
                self.connect()
            try:
                send_json(self._sock, req)
                resp = recv_json(self._sock)
            except OSError as exc:
                self.close()
                raise BusUnavailable(f"bus connection lost: {exc}") from exc
            if resp is None:
                self.close()
                raise BusUnavailable("bus closed the connection")
        if not resp.get("ok"):
            err = resp.get("error", {})
            raise ERRORS_BY_CODE.get(err.get("code"), BusError)(err.get("message", "bus error"))
        return resp

    def publish(self, topic: str, payload: bytes | str) -> int:
        text = payload.decode("utf-8") if isinstance(payload, bytes) else payload
        return self.request({"op": "publish", "topic": topic, "payload": text})["offset"]

    def poll(self, topic: str, from_offset: int, max_entries: int = 500) -> list[tuple[int, bytes]]:
        resp = self.request({"op": "poll", "topic": topic, "from_offset": from_offset,
                             "max": max_entries})
        return [(off, body.encode("utf-8")) for off, body in resp["entries"]]

    def poll_group(self, topic: str, group: str, max_entries: int = 500) -> list[tuple[int, bytes]]:
        resp = self.request({"op": "poll", "topic": topic, "group": group, "max": max_entries})
        return [(off, body.encode("utf-8")) for off, body in resp["entries"]]

    def commit(self, cursor: ConsumerCursor, offset: int) -> ConsumerCursor:
        resp = self.request({"op": "commit", "topic": cursor.topic, "group": cursor.group,
                             "offset": offset})
        c = resp["cursor"]
        return ConsumerCursor(c["topic"], c["group"], c["committed_offset"])
