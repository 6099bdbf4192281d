"""Non-blocking point-to-point messaging: post receives, start sends, poll.

Two backends share the matching rules (FIFO per ``(src, dst, tag)``):

* ``in_process``: every rank of an :class:`InProcessFabric` lives in this
  process.  Delivery happens inside ``isend`` or, for delayed messages, on
  the next poll by any endpoint of the fabric.
* ``tcp``: one process per rank.  Frames are a little-endian header
  ``{magic u32, src u32, dst u32, tag u64, byte_len u64}`` followed by the
  raw payload.
"""

from __future__ import annotations

import itertools
import queue
import socket
import struct
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass

import numpy as np

MAGIC = 0x46465431  # "FFT1"
HEADER = struct.Struct("<IIIQQ")

_request_ids = itertools.count(1)


class TransportError(RuntimeError):
    pass


class MessageTruncatedError(TransportError):
    pass


class WireFormatError(TransportError):
    pass


class UnsupportedOperationError(TransportError):
    pass


def encode_header(src: int, dst: int, tag: int, byte_len: int) -> bytes:
    return HEADER.pack(MAGIC, src, dst, tag, byte_len)


def decode_header(raw: bytes) -> tuple[int, int, int, int]:
    if len(raw) != HEADER.size:
        raise WireFormatError(f"header must be {HEADER.size} bytes, got {len(raw)}")
    magic, src, dst, tag, byte_len = HEADER.unpack(raw)
    if magic != MAGIC:
        raise WireFormatError(f"bad magic {magic:#010x}")
    return src, dst, tag, byte_len


def as_bytes(buffer) -> np.ndarray:
    """Writable uint8 view over a contiguous array."""
    arr = np.asarray(buffer)
    if not arr.flags.c_contiguous:
        raise TransportError("message buffers must be contiguous")
    return arr.reshape(-1).view(np.uint8)


@dataclass(eq=False)
class RequestHandle:
    request_id: int
    direction: str
    peer: int
    tag: int
    byte_len: int
    state: str = "pending"
    error: Exception | None = None
    buffer: object = None
    completed_at: float | None = None

    @property
    def complete(self) -> bool:
        return self.state == "complete"

    def _finish(self, byte_len: int | None = None, error: Exception | None = None) -> None:
        if self.state == "complete":
            return
        if byte_len is not None:
            self.byte_len = byte_len
        self.error = error
        self.completed_at = time.monotonic()
        self.state = "complete"


class Mailbox:
    """Receive-side matching for one rank."""

    def __init__(self):
        self._lock = threading.Lock()
        self._posted: dict[tuple, deque] = defaultdict(deque)
        self._unexpected: dict[tuple, deque] = defaultdict(deque)

    @staticmethod
    def _fill(handle: RequestHandle, payload: bytes) -> None:
        view = as_bytes(handle.buffer)
        if len(payload) > view.size:
            handle._finish(len(payload), MessageTruncatedError(
                f"message of {len(payload)} bytes from rank {handle.peer} tag {handle.tag} "
                f"exceeds the {view.size}-byte receive buffer"))
            return
        view[:len(payload)] = np.frombuffer(payload, dtype=np.uint8)
        handle._finish(len(payload))

    def post(self, handle: RequestHandle) -> None:
        key = (handle.peer, handle.tag)
        with self._lock:
            if self._unexpected[key]:
                self._fill(handle, self._unexpected[key].popleft())
            else:
                self._posted[key].append(handle)

    def deliver(self, src: int, tag: int, payload: bytes) -> None:
        key = (src, tag)
        with self._lock:
            if self._posted[key]:
                self._fill(self._posted[key].popleft(), payload)
            else:
                self._unexpected[key].append(payload)


class Endpoint:
    backend = "abstract"

    def __init__(self, rank: int, size: int):
        if not 0 <= rank < size:
            raise ValueError(f"rank {rank} outside [0, {size})")
        self.rank = rank
        self.size = size

    def _check_peer(self, peer: int) -> None:
        if not 0 <= peer < self.size:
            raise TransportError(f"peer {peer} outside [0, {self.size})")

    def _new_handle(self, direction, peer, tag, byte_len, buffer=None) -> RequestHandle:
        return RequestHandle(next(_request_ids), direction, peer, tag, byte_len, buffer=buffer)

    def progress(self) -> None:
        pass

    def irecv(self, peer: int, tag: int, buffer) -> RequestHandle:
        self._check_peer(peer)
        h = self._new_handle("recv", peer, tag, as_bytes(buffer).size, buffer)
        self._mailbox().post(h)
        self.progress()
        return h

    def isend(self, peer: int, tag: int, buffer) -> RequestHandle:
        self._check_peer(peer)
        payload = as_bytes(buffer).tobytes()
        h = self._new_handle("send", peer, tag, len(payload))
        self._send(peer, tag, payload, h)
        return h

    def test(self, handle: RequestHandle) -> bool:
        if handle.state != "complete":
            self.progress()
        if handle.error is not None:
            raise handle.error
        return handle.state == "complete"

    def wait(self, handle: RequestHandle, timeout: float = 30.0) -> None:
        deadline = time.monotonic() + timeout
        while not self.test(handle):
            if time.monotonic() > deadline:
                raise TransportError(f"timed out waiting for {handle.direction} request {handle.request_id}")
            time.sleep(1e-5)

    def inject_delay(self, peer: int, tag: int | None, delay: float) -> None:
        raise UnsupportedOperationError(f"inject_delay is not available on the {self.backend} backend")

    def close(self) -> None:
        pass

    def _mailbox(self) -> Mailbox:
        raise NotImplementedError

    def _send(self, peer, tag, payload, handle) -> None:
        raise NotImplementedError


def irecv(ep: Endpoint, peer: int, tag: int, buffer) -> RequestHandle:
    return ep.irecv(peer, tag, buffer)


def isend(ep: Endpoint, peer: int, tag: int, buffer) -> RequestHandle:
    return ep.isend(peer, tag, buffer)


def test(ep: Endpoint, handle: RequestHandle) -> bool:
    return ep.test(handle)


def inject_delay(ep: Endpoint, peer: int, tag: int | None, delay: float) -> None:
    ep.inject_delay(peer, tag, delay)


class InProcessFabric:
    """All ranks in one process; optional per-channel delivery delays."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("fabric needs at least one rank")
        self.size = size
        self._lock = threading.RLock()
        self.mailboxes = [Mailbox() for _ in range(size)]
        self.delays: dict[tuple, float] = {}
        self._outbound: dict[tuple, deque] = defaultdict(deque)
        self._pending = 0
        self.messages_sent = 0
        self.bytes_sent = 0
        self.endpoints = [InProcessEndpoint(self, r) for r in range(size)]

    def endpoint(self, rank: int) -> InProcessEndpoint:
        return self.endpoints[rank]

    def set_delay(self, src: int, dst: int, tag: int | None, delay: float) -> None:
        if delay < 0:
            raise ValueError("delay must be >= 0")
        with self._lock:
            if delay == 0:
                self.delays.pop((src, dst, tag), None)
            else:
                self.delays[(src, dst, tag)] = delay

    def send(self, src: int, dst: int, tag: int, payload: bytes, handle: RequestHandle) -> None:
        with self._lock:
            self.messages_sent += 1
            self.bytes_sent += len(payload)
            delay = self.delays.get((src, dst, tag), self.delays.get((src, dst, None), 0.0))
            chan = self._outbound[(src, dst, tag)]
            if delay == 0 and not chan:
                self.mailboxes[dst].deliver(src, tag, payload)
                handle._finish()
                return
            chan.append((time.monotonic() + delay, src, dst, tag, payload, handle))
            self._pending += 1

    def progress(self) -> None:
        if not self._pending:
            return
        with self._lock:
            now = time.monotonic()
            for chan in self._outbound.values():
                # a later message never overtakes a delayed one on its channel
                while chan and chan[0][0] <= now:
                    _, src, dst, tag, payload, handle = chan.popleft()
                    self.mailboxes[dst].deliver(src, tag, payload)
                    handle._finish()
                    self._pending -= 1

    @property
    def in_flight(self) -> int:
        return self._pending


class InProcessEndpoint(Endpoint):
    backend = "in_process"

    def __init__(self, fabric: InProcessFabric, rank: int):
        super().__init__(rank, fabric.size)
        self.fabric = fabric

    def _mailbox(self) -> Mailbox:
        return self.fabric.mailboxes[self.rank]

    def _send(self, peer, tag, payload, handle) -> None:
        self.fabric.send(self.rank, peer, tag, payload, handle)

    def progress(self) -> None:
        self.fabric.progress()

    def inject_delay(self, peer: int, tag: int | None, delay: float) -> None:
        if delay < 0:
            raise ValueError("delay must be >= 0")
        self._check_peer(peer)
        self.fabric.set_delay(self.rank, peer, tag, delay)


def load_hosts(path) -> list[tuple[str, int]]:
    """One ``host:port`` per line, line i being rank i.  Blank lines and # comments skipped."""
    hosts = []
    with open(path) as fp:
        for line in fp:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            host, _, port = line.rpartition(":")
            hosts.append((host or "127.0.0.1", int(port)))
    return hosts


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            return None
        got += k
    return bytes(buf)


class TcpEndpoint(Endpoint):
    """One rank of a multi-process job.  Each ordered rank pair uses its own connection."""

    backend = "tcp"

    def __init__(self, rank: int, hosts, connect_timeout: float = 30.0):
        super().__init__(rank, len(hosts))
        self.hosts = [tuple(h) for h in hosts]
        self.connect_timeout = connect_timeout
        self.mailbox = Mailbox()
        self.errors: list[Exception] = []
        self._closed = threading.Event()
        self._senders: dict[int, queue.Queue] = {}
        self._senders_lock = threading.Lock()
        self._conns: list[socket.socket] = []
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(self.hosts[rank])
        self._listener.listen(max(8, self.size))
        self._listener.settimeout(0.2)
        threading.Thread(target=self._accept_loop, daemon=True).start()

    def _mailbox(self) -> Mailbox:
        return self.mailbox

    def progress(self) -> None:
        if self.errors:
            raise self.errors[0]

    def _accept_loop(self) -> None:
        while not self._closed.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._conns.append(conn)
            threading.Thread(target=self._read_loop, args=(conn,), daemon=True).start()

    def _read_loop(self, conn: socket.socket) -> None:
        try:
            while not self._closed.is_set():
                raw = _recv_exact(conn, HEADER.size)
                if raw is None:
                    return
                src, dst, tag, n = decode_header(raw)
                if dst != self.rank:
                    raise WireFormatError(f"frame for rank {dst} arrived at rank {self.rank}")
                payload = _recv_exact(conn, n) if n else b""
                if payload is None:
                    raise TransportError("connection closed mid-frame")
                self.mailbox.deliver(src, tag, payload)
        except (OSError, TransportError) as exc:
            if not self._closed.is_set():
                self.errors.append(exc)

    def _connect(self, peer: int) -> socket.socket:
        deadline = time.monotonic() + self.connect_timeout
        while True:
            try:
                sock = socket.create_connection(self.hosts[peer], timeout=self.connect_timeout)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                sock.settimeout(None)
                return sock
            except OSError:
                if time.monotonic() > deadline:
                    raise TransportError(f"rank {self.rank} could not reach rank {peer} at {self.hosts[peer]}")
                time.sleep(0.02)

    def _send_loop(self, peer: int, q: queue.Queue) -> None:
        sock = None
        try:
            sock = self._connect(peer)
            self._conns.append(sock)
            while True:
                item = q.get()
                if item is None:
                    return
                handle, frame = item
                sock.sendall(frame)
                handle._finish()
        except (OSError, TransportError) as exc:
            if not self._closed.is_set():
                self.errors.append(exc)

    def _send(self, peer, tag, payload, handle) -> None:
        if peer == self.rank:
            self.mailbox.deliver(self.rank, tag, payload)
            handle._finish()
            return
        with self._senders_lock:
            q = self._senders.get(peer)
            if q is None:
                q = self._senders[peer] = queue.Queue()
                threading.Thread(target=self._send_loop, args=(peer, q), daemon=True).start()
        q.put((handle, encode_header(self.rank, peer, tag, len(payload)) + payload))

    def close(self) -> None:
        with self._senders_lock:
            for q in self._senders.values():
                q.put(None)
        time.sleep(0.01)
        self._closed.set()
        for s in [self._listener, *self._conns]:
            try:
                s.close()
            except OSError:
                pass


def measure_alpha_beta(ep_a: Endpoint, ep_b: Endpoint, small: int = 8, large: int = 1 << 20,
                       reps: int = 20) -> tuple[float, float]:
    """Ping-pong estimate of per-message startup (s) and inverse bandwidth (s/byte).

    Both endpoints must be driven from this thread (in-process fabric).
    """
    tag = 0xCA11B
    def rtt(nbytes: int) -> float:
        out = np.zeros(nbytes, dtype=np.uint8)
        back = np.zeros(nbytes, dtype=np.uint8)
        best = float("inf")
        for _ in range(reps):
            t0 = time.perf_counter()
            r1 = ep_b.irecv(ep_a.rank, tag, back)
            ep_a.isend(ep_b.rank, tag, out)
            ep_b.wait(r1)
            r2 = ep_a.irecv(ep_b.rank, tag, out)
            ep_b.isend(ep_a.rank, tag, back)
            ep_a.wait(r2)
            best = min(best, time.perf_counter() - t0)
        return best
    t_small, t_large = rtt(small), rtt(large)
    alpha = max(t_small / 2.0, 0.0)
    beta = max((t_large - t_small) / 2.0 / (large - small), 0.0)
    return alpha, beta
