"""Global transposes between stage layouts via a five-phase async exchange.

Phases per rank: cache local chunks, post every receive, pack and send one
coalesced message per peer, copy rank-local overlaps, then unpack each
peer's message as soon as its receive tests complete.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cost import PhaseTimings
from .events import EventLog, NullLog
from .grid import Box, ChunkDescriptor, DistributedArray, Layout, chunk_view


class LayoutMismatchError(ValueError):
    pass


class BufferCapacityError(ValueError):
    pass


class LengthMismatchError(ValueError):
    pass


def make_tag(phase_id: int, src_chunk_id: int) -> int:
    """Pack (redistribution id, sender's source chunk) into one u64 tag."""
    return (int(phase_id) << 32) | int(src_chunk_id)


@dataclass(frozen=True)
class BlockPattern:
    src_box: Box
    dst_box: Box
    src_chunk_id: int
    dst_chunk_id: int
    peer_rank: int

    @property
    def volume(self) -> int:
        return self.src_box.volume


def _order(p: BlockPattern):
    ox, oy, oz = p.dst_box.offset
    return (p.dst_chunk_id, oz, oy, ox)


@dataclass
class TransposePlan:
    my_rank: int
    src_layout: Layout
    dst_layout: Layout
    send_patterns: dict[int, list[BlockPattern]]
    recv_patterns: dict[int, list[BlockPattern]]
    local_patterns: list[BlockPattern]

    @property
    def send_ranks(self) -> tuple[int, ...]:
        return tuple(sorted(r for r, p in self.send_patterns.items() if p))

    @property
    def recv_ranks(self) -> tuple[int, ...]:
        return tuple(sorted(r for r, p in self.recv_patterns.items() if p))

    def send_volume(self, peer: int) -> int:
        return sum(p.volume for p in self.send_patterns.get(peer, ()))

    def recv_volume(self, peer: int) -> int:
        return sum(p.volume for p in self.recv_patterns.get(peer, ()))

    def send_tag(self, phase_id: int, peer: int) -> int:
        return make_tag(phase_id, min(p.src_chunk_id for p in self.send_patterns[peer]))

    def recv_tag(self, phase_id: int, peer: int) -> int:
        return make_tag(phase_id, min(p.src_chunk_id for p in self.recv_patterns[peer]))


def build_transpose_plan(src_layout: Layout, dst_layout: Layout, my_rank: int) -> TransposePlan:
    if src_layout.grid.shape != dst_layout.grid.shape:
        raise LayoutMismatchError(
            f"layouts cover different grids {src_layout.grid.shape} vs {dst_layout.grid.shape}")
    my_src = [c for c in src_layout if c.owner_rank == my_rank]
    my_dst = [c for c in dst_layout if c.owner_rank == my_rank]
    send: dict[int, list] = {}
    recv: dict[int, list] = {}
    local = []
    for s in my_src:
        for d in dst_layout:
            box = s.box.intersect(d.box)
            if box is None:
                continue
            pat = BlockPattern(box, box, s.chunk_id, d.chunk_id, d.owner_rank)
            if d.owner_rank == my_rank:
                local.append(pat)
            else:
                send.setdefault(d.owner_rank, []).append(pat)
    for d in my_dst:
        for s in src_layout:
            if s.owner_rank == my_rank:
                continue
            box = s.box.intersect(d.box)
            if box is not None:
                recv.setdefault(s.owner_rank, []).append(
                    BlockPattern(box, box, s.chunk_id, d.chunk_id, s.owner_rank))
    for lst in (*send.values(), *recv.values(), local):
        lst.sort(key=_order)
    return TransposePlan(my_rank, src_layout, dst_layout, send, recv, local)


def pack_blocks(buffer: np.ndarray, desc: ChunkDescriptor, patterns, out: np.ndarray) -> int:
    """Serialize each pattern's box of ``buffer`` back to back, x-fastest. Returns bytes written."""
    view = chunk_view(buffer, desc.extent)
    need = sum(p.volume for p in patterns)
    if need > out.size:
        raise BufferCapacityError(f"{need} elements do not fit a {out.size}-element buffer")
    pos = 0
    for p in patterns:
        block = view[desc.box.local_slices(p.src_box)]
        n = p.volume
        out[pos:pos + n] = block.ravel(order="F")
        pos += n
    return pos * out.itemsize


def unpack_blocks(inbuf: np.ndarray, patterns, buffer: np.ndarray, desc: ChunkDescriptor,
                  count: int | None = None) -> None:
    """Inverse of :func:`pack_blocks`; ``count`` is the number of valid elements in ``inbuf``."""
    count = inbuf.size if count is None else count
    need = sum(p.volume for p in patterns)
    if count != need:
        raise LengthMismatchError(f"received {count} elements, patterns cover {need}")
    view = chunk_view(buffer, desc.extent)
    pos = 0
    for p in patterns:
        n = p.volume
        view[desc.box.local_slices(p.dst_box)] = inbuf[pos:pos + n].reshape(p.dst_box.extent, order="F")
        pos += n


def copy_local(src: DistributedArray, dst: DistributedArray, pattern: BlockPattern) -> None:
    sd, dd = src.descriptor(pattern.src_chunk_id), dst.descriptor(pattern.dst_chunk_id)
    dst.view(pattern.dst_chunk_id)[dd.box.local_slices(pattern.dst_box)] = \
        src.view(pattern.src_chunk_id)[sd.box.local_slices(pattern.src_box)]


@dataclass
class RedistWorkspace:
    """Persistent per-peer buffers and request slots for one layout pair on one rank."""

    plan: TransposePlan
    dtype: np.dtype
    send_buffers: dict = field(default_factory=dict)
    recv_buffers: dict = field(default_factory=dict)
    send_reqs: dict = field(default_factory=dict)
    recv_reqs: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict)
    allocations: int = 0
    timings: PhaseTimings = field(default_factory=PhaseTimings)
    calls: int = 0

    def __post_init__(self):
        self.dtype = np.dtype(self.dtype)
        self.ensure_buffers()

    def ensure_buffers(self) -> None:
        for bufs, ranks, vol in ((self.send_buffers, self.plan.send_ranks, self.plan.send_volume),
                                 (self.recv_buffers, self.plan.recv_ranks, self.plan.recv_volume)):
            for r in ranks:
                need = vol(r)
                if r not in bufs or bufs[r].size < need:
                    bufs[r] = np.empty(need, dtype=self.dtype)
                    self.allocations += 1


def make_workspace(src_layout: Layout, dst_layout: Layout, rank: int, dtype) -> RedistWorkspace:
    return RedistWorkspace(build_transpose_plan(src_layout, dst_layout, rank), dtype)


def redistribute_steps(src: DistributedArray, dst: DistributedArray, ws: RedistWorkspace, ep,
                       *, phase_id: int = 0, log: EventLog | None = None, progressive: bool = True):
    """Generator running one rank's redistribution.

    Yields while waiting on the transport (``True`` if the last round
    unpacked something).  With ``progressive=False`` it behaves like a
    barrier-style exchange: every send must finish before any unpack.
    """
    plan = ws.plan
    rank = plan.my_rank
    if src.layout.chunks != plan.src_layout.chunks or dst.layout.chunks != plan.dst_layout.chunks:
        raise LayoutMismatchError("workspace plan was built for different layouts")
    log = log if log is not None else NullLog()
    itemsize = ws.dtype.itemsize
    ws.ensure_buffers()
    ws.calls += 1
    t_pack = t_unpack = 0.0

    # Phase 1: stage local chunks.
    ws.cache = {cid: src.chunks[cid] for cid in src.chunks
                if src.descriptor(cid).owner_rank == rank}
    log.emit("cache", rank=rank, phase="cache")

    # Phase 2: post receives before any send.
    t_post = time.monotonic()
    for r in plan.recv_ranks:
        n = plan.recv_volume(r)
        ws.recv_reqs[r] = ep.irecv(r, plan.recv_tag(phase_id, r), ws.recv_buffers[r][:n])
        log.emit("recv_post", rank=rank, peer=r, phase="post", nbytes=n * itemsize)

    # Phase 3: pack one coalesced message per peer and send it.
    for r in plan.send_ranks:
        prev = ws.send_reqs.get(r)
        while prev is not None and not ep.test(prev):
            yield False
        pats = plan.send_patterns[r]
        out = ws.send_buffers[r]
        t0 = time.perf_counter()
        nbytes = pack_blocks(ws.cache[pats[0].src_chunk_id], src.descriptor(pats[0].src_chunk_id), pats, out) \
            if len({p.src_chunk_id for p in pats}) == 1 else _pack_multi(src, pats, out)
        t_pack += time.perf_counter() - t0
        log.emit("pack", rank=rank, peer=r, phase="pack_send", nbytes=nbytes)
        ws.send_reqs[r] = ep.isend(r, plan.send_tag(phase_id, r), out[:nbytes // itemsize])
        log.emit("send_start", rank=rank, peer=r, phase="pack_send", nbytes=nbytes)

    # Phase 4: rank-local overlaps.
    for p in plan.local_patterns:
        copy_local(src, dst, p)
        log.emit("local_copy", rank=rank, phase="local", nbytes=p.volume * itemsize)

    # Phase 5: progressive unpack.
    pending_send = list(plan.send_ranks)
    pending_recv = list(plan.recv_ranks)
    t_last_recv = t_post

    def poll_sends():
        for r in list(pending_send):
            if ep.test(ws.send_reqs[r]):
                pending_send.remove(r)
                log.emit("send_complete", rank=rank, peer=r, phase="pack_send",
                         nbytes=ws.send_reqs[r].byte_len)

    def unpack(r):
        nonlocal t_unpack, t_last_recv
        h = ws.recv_reqs[r]
        t_last_recv = max(t_last_recv, h.completed_at or time.monotonic())
        pats = plan.recv_patterns[r]
        log.emit("unpack_start", rank=rank, peer=r, phase="unpack", nbytes=h.byte_len)
        t0 = time.perf_counter()
        _unpack_multi(ws.recv_buffers[r], pats, dst, h.byte_len // itemsize)
        t_unpack += time.perf_counter() - t0
        log.emit("unpack_complete", rank=rank, peer=r, phase="unpack", nbytes=h.byte_len)

    if not progressive:
        poll_sends()
        while pending_send:
            yield False
            poll_sends()
        arrived = set()
        while len(arrived) < len(pending_recv):
            for r in pending_recv:
                if r not in arrived and ep.test(ws.recv_reqs[r]):
                    arrived.add(r)
            if len(arrived) < len(pending_recv):
                yield False
        for r in pending_recv:
            unpack(r)
        pending_recv = []

    while pending_recv:
        progressed = False
        for r in list(pending_recv):
            if ep.test(ws.recv_reqs[r]):
                unpack(r)
                pending_recv.remove(r)
                progressed = True
        poll_sends()
        if pending_recv:
            yield progressed
    poll_sends()
    while pending_send:
        yield False
        poll_sends()
    ws.timings = PhaseTimings(t_pack, max(0.0, t_last_recv - t_post), t_unpack)


def _pack_multi(src: DistributedArray, pats, out) -> int:
    pos = 0
    for p in pats:
        d = src.descriptor(p.src_chunk_id)
        pos += pack_blocks(src.chunks[p.src_chunk_id], d, [p], out[pos // out.itemsize:])
    return pos


def _unpack_multi(inbuf, pats, dst: DistributedArray, count: int) -> None:
    need = sum(p.volume for p in pats)
    if count != need:
        raise LengthMismatchError(f"received {count} elements, patterns cover {need}")
    pos = 0
    for p in pats:
        d = dst.descriptor(p.dst_chunk_id)
        unpack_blocks(inbuf[pos:pos + p.volume], [p], dst.chunks[p.dst_chunk_id], d)
        pos += p.volume


def drive(generators, poll_sleep: float = 0.0) -> None:
    """Round-robin a set of cooperative generators to completion in this thread."""
    live = list(generators)
    while live:
        progressed = False
        for g in list(live):
            try:
                progressed |= bool(next(g))
            except StopIteration:
                live.remove(g)
                progressed = True
        if live and not progressed:
            time.sleep(poll_sleep)


def redistribute(src: DistributedArray, dst: DistributedArray, ws: RedistWorkspace, ep, *,
                 phase_id: int = 0, log: EventLog | None = None, progressive: bool = True,
                 poll_sleep: float = 1e-5) -> None:
    """Blocking form for one rank; peers must be progressing elsewhere."""
    drive([redistribute_steps(src, dst, ws, ep, phase_id=phase_id, log=log, progressive=progressive)],
          poll_sleep)


def redistribute_all(src: DistributedArray, dst: DistributedArray, workspaces: dict, endpoints: dict,
                     *, phase_id: int = 0, log: EventLog | None = None, progressive: bool = True,
                     poll_sleep: float = 0.0) -> None:
    """Every local rank's redistribution, interleaved cooperatively."""
    drive([redistribute_steps(src, dst, workspaces[r], endpoints[r], phase_id=phase_id, log=log,
                              progressive=progressive) for r in sorted(workspaces)], poll_sleep)
