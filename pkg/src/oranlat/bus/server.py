"""TCP front end for ``Broker``: one JSON frame per request and response.

Requests::

    {"op": "publish", "topic": t, "payload": "<utf-8 text>"}
    {"op": "poll", "topic": t, "from_offset": k, "max": m}
    {"op": "poll", "topic": t, "group": g, "max": m}      # from the committed offset
    {"op": "commit", "topic": t, "group": g, "offset": k}

Responses carry ``"ok": true`` plus ``offset`` / ``entries`` / ``cursor``,
or ``"ok": false`` with ``{"error": {"code", "message"}}``.
"""

from __future__ import annotations

import json
import logging
import os
import socketserver
import threading

from .framing import FrameError, read_frame, send_json
from .log import BadRequest, Broker, BusError, ConsumerCursor

log = logging.getLogger(__name__)

DEFAULT_PORT = 9701
MAX_POLL = 10_000


def resolve_port(port: int | None = None) -> int:
    """Explicit port, else ``BUS_PORT`` from the environment, else 9701."""
    if port is not None:
        return int(port)
    env = os.environ.get("BUS_PORT")
    return int(env) if env else DEFAULT_PORT


def handle_request(broker: Broker, req) -> dict:
    try:
        if not isinstance(req, dict):
            raise BadRequest("request must be a JSON object")
        op = req.get("op")
        topic = req.get("topic")
        if op == "publish":
            payload = req.get("payload")
            if not isinstance(payload, str):
                raise BadRequest("publish needs a string payload")
            return {"ok": True, "offset": broker.publish(topic, payload.encode("utf-8"))}
        if op == "poll":
            max_entries = req.get("max", 500)
            if not isinstance(max_entries, int) or not 0 <= max_entries <= MAX_POLL:
                raise BadRequest(f"max must be an integer in [0, {MAX_POLL}]")
            if "from_offset" in req:
                start = req["from_offset"]
            elif "group" in req:
                start = broker.committed(topic, req["group"]).committed_offset
            else:
                raise BadRequest("poll needs from_offset or group")
            entries = broker.poll(topic, start, max_entries)
            return {"ok": True, "entries": [[off, body.decode("utf-8")] for off, body in entries]}
        if op == "commit":
            group, offset = req.get("group"), req.get("offset")
            cursor = broker.commit(ConsumerCursor(topic, group), offset)
            return {"ok": True, "cursor": cursor.to_dict()}
        raise BadRequest(f"unknown op {op!r}")
    except BusError as exc:
        return {"ok": False, "error": {"code": exc.code, "message": str(exc)}}
    except UnicodeDecodeError as exc:
        return {"ok": False, "error": {"code": "bad_request", "message": f"payload is not UTF-8: {exc}"}}


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        broker: Broker = self.server.broker
        while True:
            try:
                body = read_frame(self.request)
            except (ConnectionError, FrameError, OSError):
                return
            if body is None:
                return
            try:
                req = json.loads(body.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                resp = {"ok": False, "error": {"code": "bad_request", "message": str(exc)}}
            else:
                resp = handle_request(broker, req)
            try:
                send_json(self.request, resp)
            except OSError:
                return


class BusServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, broker: Broker, host: str = "127.0.0.1", port: int | None = None):
        self.broker = broker
        super().__init__((host, resolve_port(port)), _Handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]

    def start(self) -> "BusServer":
        self._thread = threading.Thread(target=self.serve_forever, name="bus-server", daemon=True)
        self._thread.start()
        log.info("bus listening on %s:%d", *self.address)
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()
