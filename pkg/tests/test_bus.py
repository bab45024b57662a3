import os
import socket
import threading

import pytest
from hypothesis import given, settings, strategies as st

from oranlat.bus import (
    MAX_PAYLOAD,
    BadRequest,
    Broker,
    BusClient,
    BusServer,
    BusUnavailable,
    ConsumerCursor,
    EmptyPayload,
    OffsetOutOfRange,
    PayloadTooLarge,
    UnknownTopic,
    encode_frame,
    resolve_port,
)
from oranlat.bus.framing import HEADER, read_frame


@pytest.fixture
def broker(tmp_path):
    with Broker(tmp_path / "bus") as b:
        yield b


@pytest.fixture
def server(broker):
    srv = BusServer(broker, port=0).start()
    yield srv
    srv.stop()


def test_offsets_are_contiguous(broker):
    assert [broker.publish("t", p) for p in (b"a", b"b", b"c")] == [0, 1, 2]


def test_empty_and_oversized_payloads(broker):
    with pytest.raises(EmptyPayload):
        broker.publish("t", b"")
    with pytest.raises(PayloadTooLarge):
        broker.publish("t", b"x" * (MAX_PAYLOAD + 1))
    assert broker.publish("t", b"x" * MAX_PAYLOAD) == 0


def test_poll_semantics(broker):
    for p in (b"a", b"b", b"c"):
        broker.publish("t", p)
    assert broker.poll("t", 1, 10) == [(1, b"b"), (2, b"c")]
    assert broker.poll("t", 3, 10) == []
    assert broker.poll("t", 0, 2) == [(0, b"a"), (1, b"b")]
    assert broker.poll("t", 0) == broker.poll("t", 0)


def test_unknown_topic_and_bad_names(broker):
    with pytest.raises(UnknownTopic):
        broker.poll("nope", 0)
    with pytest.raises(BadRequest):
        broker.publish("../escape", b"x")
    with pytest.raises(BadRequest):
        broker.poll("t", -1)


def test_publish_survives_restart(tmp_path):
    with Broker(tmp_path) as b:
        b.publish("kpm", b"payload-0")
        b.publish("kpm", b"payload-1")
    with Broker(tmp_path) as b:
        assert b.poll("kpm", 0) == [(0, b"payload-0"), (1, b"payload-1")]
        assert b.publish("kpm", b"payload-2") == 2


def test_torn_tail_is_discarded_on_recovery(tmp_path):
    with Broker(tmp_path) as b:
        b.publish("kpm", b"whole")
    with open(tmp_path / "kpm.log", "ab") as fh:
        fh.write(HEADER.pack(100) + b"partial")
    with Broker(tmp_path) as b:
        assert b.poll("kpm", 0) == [(0, b"whole")]
        assert b.publish("kpm", b"next") == 1
        assert b.poll("kpm", 1) == [(1, b"next")]


def test_commit_and_resume(tmp_path):
    with Broker(tmp_path) as b:
        for i in range(4):
            b.publish("kpm", b"m%d" % i)
        cur = b.commit(ConsumerCursor("kpm", "g"), 2)
        assert cur.committed_offset == 2
    with Broker(tmp_path) as b:
        start = b.committed("kpm", "g").committed_offset
        assert start == 2
        assert b.poll("kpm", start)[0] == (2, b"m2")
        assert b.committed("kpm", "other").committed_offset == 0


def test_commit_beyond_end(broker):
    broker.publish("kpm", b"x")
    broker.commit(ConsumerCursor("kpm", "g"), 1)
    with pytest.raises(OffsetOutOfRange):
        broker.commit(ConsumerCursor("kpm", "g"), 2)


def test_crash_before_commit_redelivers(tmp_path):
    with Broker(tmp_path) as b:
        for i in range(6):
            b.publish("kpm", b"m%d" % i)
        b.commit(ConsumerCursor("kpm", "g"), 2)
        processed = b.poll("kpm", 2, 3)  # consumer handles 2..4, then dies
    with Broker(tmp_path) as b:
        again = b.poll("kpm", b.committed("kpm", "g").committed_offset, 3)
    assert again == processed


def test_concurrent_producers_keep_offsets_dense(broker):
    def produce(tag):
        for i in range(200):
            broker.publish("t", f"{tag}-{i}".encode())
    threads = [threading.Thread(target=produce, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    entries = broker.poll("t", 0, 10_000)
    assert [o for o, _ in entries] == list(range(800))
    assert len({p for _, p in entries}) == 800
    for k in range(4):
        mine = [int(p.split(b"-")[1]) for _, p in entries if p.startswith(b"%d-" % k)]
        assert mine == list(range(200))


def test_tcp_round_trip(server):
    host, port = server.address
    with BusClient(host, port) as c:
        assert c.publish("kpm", b'{"a":1}') == 0
        assert c.publish("kpm", "second") == 1
        assert c.poll("kpm", 0) == [(0, b'{"a":1}'), (1, b"second")]
        cur = c.commit(ConsumerCursor("kpm", "x"), 1)
        assert cur.committed_offset == 1
        assert c.poll_group("kpm", "x") == [(1, b"second")]
        with pytest.raises(UnknownTopic):
            c.poll("missing", 0)
        with pytest.raises(OffsetOutOfRange):
            c.commit(ConsumerCursor("kpm", "x"), 5)
        with pytest.raises(EmptyPayload):
            c.publish("kpm", b"")


def test_wire_format_is_length_prefixed_json(server):
    host, port = server.address
    with socket.create_connection((host, port)) as s:
        s.sendall(encode_frame(b'{"op":"publish","topic":"w","payload":"hi"}'))
        body = read_frame(s)
        assert body == b'{"ok":true,"offset":0}'
        s.sendall(encode_frame(b"not json"))
        assert b'"bad_request"' in read_frame(s)


def test_client_gives_up_with_backoff():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    c = BusClient("127.0.0.1", port, retries=3, backoff_s=0.01)
    with pytest.raises(BusUnavailable):
        c.connect()


def test_port_resolution(monkeypatch):
    monkeypatch.delenv("BUS_PORT", raising=False)
    assert resolve_port(None) == 9701
    monkeypatch.setenv("BUS_PORT", "9999")
    assert resolve_port(None) == 9999
    assert resolve_port(1234) == 1234


def test_log_file_uses_same_framing(tmp_path):
    with Broker(tmp_path) as b:
        b.publish("kpm", b"abc")
    assert (tmp_path / "kpm.log").read_bytes() == b"\x00\x00\x00\x03abc"


@settings(max_examples=20, deadline=None)
@given(st.lists(st.binary(min_size=1, max_size=200), min_size=1, max_size=30))
def test_replays_are_identical(tmp_path_factory, payloads):
    d = tmp_path_factory.mktemp("bus")
    with Broker(d, fsync=False) as b:
        offsets = [b.publish("r", p) for p in payloads]
        first = b.poll("r", 0, 1000)
    with Broker(d, fsync=False) as b:
        second = b.poll("r", 0, 1000)
    assert offsets == list(range(len(payloads)))
    assert first == second == list(enumerate(payloads))
