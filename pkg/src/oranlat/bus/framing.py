"""4-byte big-endian length prefix framing, shared by the wire and the log files."""

from __future__ import annotations

import json
import socket
import struct

HEADER = struct.Struct(">I")
HEADER_SIZE = HEADER.size
MAX_FRAME = 16 * 1024 * 1024


class FrameError(ValueError):
    pass


def encode_frame(body: bytes) -> bytes:
    if len(body) > MAX_FRAME:
        raise FrameError(f"frame of {len(body)} bytes exceeds {MAX_FRAME}")
    return HEADER.pack(len(body)) + body


def recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ConnectionError(f"peer closed with {remaining} of {n} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> bytes | None:
    """Read one frame body; ``None`` on a clean EOF before a header."""
    first = sock.recv(HEADER_SIZE)
    if not first:
        return None
    header = first if len(first) == HEADER_SIZE else first + recv_exact(sock, HEADER_SIZE - len(first))
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME:
        raise FrameError(f"declared frame length {length} exceeds {MAX_FRAME}")
    return recv_exact(sock, length)


def send_json(sock: socket.socket, obj) -> None:
    sock.sendall(encode_frame(json.dumps(obj, separators=(",", ":")).encode("utf-8")))


def recv_json(sock: socket.socket):
    body = read_frame(sock)
    if body is None:
        return None
    return json.loads(body.decode("utf-8"))
