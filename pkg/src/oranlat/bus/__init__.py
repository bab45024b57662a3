"""Minimal persistent pub/sub log standing in for the RIC-to-Kafka leg."""

from .client import BusClient, BusUnavailable
from .framing import encode_frame, read_frame
from .log import (
    MAX_PAYLOAD,
    BadRequest,
    Broker,
    BusError,
    ConsumerCursor,
    EmptyPayload,
    OffsetOutOfRange,
    PayloadTooLarge,
    StorageError,
    TopicLog,
    UnknownTopic,
)
from .server import DEFAULT_PORT, BusServer, handle_request, resolve_port

KPM_TOPIC = "kpm"

__all__ = [
    "BadRequest", "Broker", "BusClient", "BusError", "BusServer", "BusUnavailable",
    "ConsumerCursor", "DEFAULT_PORT", "EmptyPayload", "KPM_TOPIC", "MAX_PAYLOAD",
    "OffsetOutOfRange", "PayloadTooLarge", "StorageError", "TopicLog", "UnknownTopic",
    "encode_frame", "handle_request", "read_frame", "resolve_port",
]
