import socket
import struct
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from taskfft.transport import (
    HEADER,
    MAGIC,
    InProcessFabric,
    MessageTruncatedError,
    TcpEndpoint,
    TransportError,
    UnsupportedOperationError,
    WireFormatError,
    decode_header,
    encode_header,
    inject_delay,
    irecv,
    isend,
    load_hosts,
    test as ep_test,
)


def pair():
    f = InProcessFabric(2)
    return f, f.endpoint(0), f.endpoint(1)


def test_recv_before_send():
    _, a, b = pair()
    buf = np.zeros(4, dtype=np.int32)
    h = irecv(b, 0, 7, buf)
    assert not ep_test(b, h)
    s = isend(a, 1, 7, np.arange(4, dtype=np.int32))
    assert ep_test(a, s) and ep_test(b, h) and ep_test(b, h)
    assert buf.tolist() == [0, 1, 2, 3]


def test_send_before_recv():
    _, a, b = pair()
    isend(a, 1, 3, np.array([9.5]))
    buf = np.zeros(1)
    h = irecv(b, 0, 3, buf)
    assert ep_test(b, h) and buf[0] == 9.5


def test_invalid_peer():
    _, a, _ = pair()
    with pytest.raises(TransportError):
        irecv(a, 2, 0, np.zeros(1))
    with pytest.raises(TransportError):
        isend(a, 2, 0, np.zeros(1))


def test_self_send():
    f = InProcessFabric(1)
    e = f.endpoint(0)
    buf = np.zeros(3)
    h = irecv(e, 0, 1, buf)
    isend(e, 0, 1, np.ones(3))
    assert ep_test(e, h) and buf.sum() == 3


def test_fifo_per_channel():
    _, a, b = pair()
    isend(a, 1, 5, np.array([1.0]))
    isend(a, 1, 5, np.array([2.0]))
    x, y = np.zeros(1), np.zeros(1)
    hx, hy = irecv(b, 0, 5, x), irecv(b, 0, 5, y)
    assert ep_test(b, hx) and ep_test(b, hy)
    assert (x[0], y[0]) == (1.0, 2.0)


def test_truncation_on_receive_side():
    _, a, b = pair()
    h = irecv(b, 0, 1, np.zeros(2))
    s = isend(a, 1, 1, np.zeros(4))
    assert ep_test(a, s)
    with pytest.raises(MessageTruncatedError):
        ep_test(b, h)


def test_delay_semantics():
    f, a, b = pair()
    inject_delay(a, 1, None, 0)
    buf = np.zeros(1)
    h = irecv(b, 0, 1, buf)
    isend(a, 1, 1, np.ones(1))
    assert ep_test(b, h)
    with pytest.raises(ValueError):
        inject_delay(a, 1, None, -1.0)
    inject_delay(a, 1, None, 0.03)
    h = irecv(b, 0, 2, buf)
    s = isend(a, 1, 2, np.full(1, 4.0))
    assert not ep_test(b, h) and not ep_test(a, s)
    b.wait(h, timeout=2)
    assert buf[0] == 4.0 and ep_test(a, s)


def test_delayed_message_blocks_later_ones_on_channel():
    f, a, b = pair()
    f.set_delay(0, 1, None, 0.02)
    isend(a, 1, 1, np.ones(1))
    f.set_delay(0, 1, None, 0)
    isend(a, 1, 1, np.full(1, 2.0))
    first, second = np.zeros(1), np.zeros(1)
    h1, h2 = irecv(b, 0, 1, first), irecv(b, 0, 1, second)
    assert not ep_test(b, h2)
    b.wait(h2, timeout=2)
    assert ep_test(b, h1) and (first[0], second[0]) == (1.0, 2.0)


@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1), st.integers(0, 2**64 - 1),
       st.integers(0, 2**64 - 1))
def test_header_roundtrip(src, dst, tag, n):
    raw = encode_header(src, dst, tag, n)
    assert len(raw) == 28
    assert decode_header(raw) == (src, dst, tag, n)


def test_header_layout_is_little_endian():
    raw = encode_header(1, 2, 3, 4)
    assert raw[:4] == b"1TFF" and struct.unpack("<I", raw[:4])[0] == MAGIC == 0x46465431
    assert raw == struct.pack("<IIIQQ", MAGIC, 1, 2, 3, 4)
    assert HEADER.size == 28
    with pytest.raises(WireFormatError):
        decode_header(b"\0" * 28)


def _free_hosts(n):
    socks = [socket.socket() for _ in range(n)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    hosts = [s.getsockname() for s in socks]
    for s in socks:
        s.close()
    return hosts


def test_tcp_integrity_and_fifo():
    hosts = _free_hosts(2)
    eps = [TcpEndpoint(r, hosts) for r in range(2)]
    try:
        payload = (np.arange(1000) * (1 + 2j)).astype(np.complex128)
        bufs = [np.zeros(1000, dtype=np.complex128) for _ in range(2)]
        hs = [eps[1].irecv(0, 42, b) for b in bufs]
        eps[0].isend(1, 42, payload)
        eps[0].isend(1, 42, payload * 2)
        for h in hs:
            eps[1].wait(h, timeout=10)
        assert bufs[0].tobytes() == payload.tobytes()
        assert bufs[1].tobytes() == (payload * 2).tobytes()
        own = np.zeros(3)
        h = eps[0].irecv(0, 1, own)
        eps[0].isend(0, 1, np.ones(3))
        assert eps[0].test(h) and own.sum() == 3
        with pytest.raises(UnsupportedOperationError):
            eps[0].inject_delay(1, None, 0.1)
    finally:
        for e in eps:
            e.close()


def test_tcp_raw_frame_from_foreign_client():
    hosts = _free_hosts(2)
    ep = TcpEndpoint(1, hosts)
    try:
        buf = np.zeros(2, dtype=np.float64)
        h = ep.irecv(0, 9, buf)
        body = np.array([1.5, -2.0]).tobytes()
        with socket.create_connection(hosts[1]) as s:
            s.sendall(struct.pack("<IIIQQ", 0x46465431, 0, 1, 9, len(body)) + body)
            ep.wait(h, timeout=10)
        assert buf.tolist() == [1.5, -2.0]
    finally:
        ep.close()


def test_load_hosts(tmp_path):
    p = tmp_path / "h"
    p.write_text("# ranks\n127.0.0.1:5000\n\nlocalhost:5001  # second\n")
    assert load_hosts(p) == [("127.0.0.1", 5000), ("localhost", 5001)]


def test_concurrent_senders_one_endpoint():
    f, a, b = pair()
    n = 200
    bufs = [np.zeros(1) for _ in range(n)]
    hs = [irecv(b, 0, i, bufs[i]) for i in range(n)]

    def send(lo):
        for i in range(lo, n, 4):
            isend(a, 1, i, np.array([float(i)]))
    ts = [threading.Thread(target=send, args=(k,)) for k in range(4)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert all(ep_test(b, h) for h in hs)
    assert [x[0] for x in bufs] == list(map(float, range(n)))
