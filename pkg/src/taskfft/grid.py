"""Global grid description and the slab/pencil stage layouts.

Every chunk is a box of the global ``(nx, ny, nz)`` grid.  Chunk buffers are
flat and x-fastest, so the local element ``(x, y, z)`` of a chunk with extent
``(ex, ey, ez)`` lives at ``x + ex * (y + ey * z)``.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


class InvalidGridError(ValueError):
    pass


class DecompositionInfeasibleError(ValueError):
    pass


class ChunkNotFoundError(KeyError):
    pass


PRECISIONS = {"f32": np.complex64, "f64": np.complex128}
STAGES = ("A", "B", "C")


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    nz: int
    precision: str = "f64"

    def __post_init__(self):
        for n in self.shape:
            if int(n) != n or n < 1:
                raise InvalidGridError(f"grid extents must be positive integers, got {self.shape}")
        if self.precision not in PRECISIONS:
            raise InvalidGridError(f"unknown precision {self.precision!r}")
        if self.nx * self.ny * self.nz > sys.maxsize:
            raise InvalidGridError("grid too large for this platform")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(PRECISIONS[self.precision])


@dataclass(frozen=True)
class Box:
    offset: tuple[int, int, int]
    extent: tuple[int, int, int]

    @property
    def volume(self) -> int:
        ex, ey, ez = self.extent
        return ex * ey * ez

    @property
    def stop(self) -> tuple[int, int, int]:
        return tuple(o + e for o, e in zip(self.offset, self.extent))

    def intersect(self, other: Box) -> Box | None:
        lo = tuple(max(a, b) for a, b in zip(self.offset, other.offset))
        hi = tuple(min(a, b) for a, b in zip(self.stop, other.stop))
        if any(h <= l for l, h in zip(lo, hi)):
            return None
        return Box(lo, tuple(h - l for l, h in zip(lo, hi)))

    def contains(self, gidx) -> bool:
        return all(o <= g < o + e for g, o, e in zip(gidx, self.offset, self.extent))

    def local_slices(self, inner: Box) -> tuple[slice, slice, slice]:
        """Slices selecting ``inner`` inside an array laid out over ``self``."""
        return tuple(
            slice(io - o, io - o + ie)
            for o, io, ie in zip(self.offset, inner.offset, inner.extent)
        )

    def global_slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(o, o + e) for o, e in zip(self.offset, self.extent))


@dataclass(frozen=True)
class ChunkDescriptor:
    owner_rank: int
    global_offset: tuple[int, int, int]
    extent: tuple[int, int, int]
    chunk_id: int

    def __post_init__(self):
        if any(e < 1 for e in self.extent) or any(o < 0 for o in self.global_offset):
            raise InvalidGridError(f"degenerate chunk {self}")

    @property
    def box(self) -> Box:
        return Box(self.global_offset, self.extent)

    @property
    def size(self) -> int:
        return self.box.volume


@dataclass(frozen=True)
class Layout:
    """One stage layout: one chunk per rank, each spanning ``whole_axes`` fully."""

    stage: int
    grid: GridSpec
    whole_axes: tuple[int, ...]
    chunks: tuple[ChunkDescriptor, ...]

    def __iter__(self) -> Iterator[ChunkDescriptor]:
        return iter(self.chunks)

    def __len__(self) -> int:
        return len(self.chunks)

    def chunk_of(self, rank: int) -> ChunkDescriptor:
        return chunk_of(self, rank)

    def by_id(self, chunk_id: int) -> ChunkDescriptor:
        for c in self.chunks:
            if c.chunk_id == chunk_id:
                return c
        raise ChunkNotFoundError(chunk_id)


@dataclass(frozen=True)
class DecompositionPlan:
    grid: GridSpec
    strategy: str
    process_grid: tuple[int, int]
    layouts: tuple[Layout, Layout, Layout]

    @property
    def nranks(self) -> int:
        return self.process_grid[0] * self.process_grid[1]


def block_partition(n: int, parts: int) -> list[tuple[int, int]]:
    """Balanced (offset, length) blocks; the remainder goes to the lowest indices."""
    base, rem = divmod(n, parts)
    out, start = [], 0
    for i in range(parts):
        length = base + (1 if i < rem else 0)
        out.append((start, length))
        start += length
    return out


# For each stage: the axis split by the first process-grid index and the axis
# split by the second; the remaining axis is whole.
_PENCIL_SPLITS = ((1, 2), (0, 2), (0, 1))
# Slab: process grid (P, 1). D1 = D2 split z, D3 split y.
_SLAB_SPLITS = ((2, None), (2, None), (1, None))


def _build_layout(grid: GridSpec, stage: int, split: tuple, pgrid: tuple[int, int],
                  id_base: int) -> Layout:
    p1, p2 = pgrid
    a1, a2 = split
    blocks1 = block_partition(grid.shape[a1], p1)
    blocks2 = block_partition(grid.shape[a2], p2) if a2 is not None else [(0, None)]
    chunks = []
    for i1 in range(p1):
        for i2 in range(p2):
            rank = i1 * p2 + i2
            offset = [0, 0, 0]
            extent = list(grid.shape)
            offset[a1], extent[a1] = blocks1[i1]
            if a2 is not None:
                offset[a2], extent[a2] = blocks2[i2]
            chunks.append(ChunkDescriptor(rank, tuple(offset), tuple(extent), id_base + rank))
    whole = tuple(a for a in range(3) if a not in split)
    return Layout(stage, grid, whole, tuple(chunks))


def make_decomposition(grid: GridSpec, strategy: str,
                       process_grid: tuple[int, int]) -> DecompositionPlan:
    p1, p2 = (int(p) for p in process_grid)
    if p1 < 1 or p2 < 1:
        raise DecompositionInfeasibleError(f"process grid must be positive, got {process_grid}")
    nx, ny, nz = grid.shape
    nranks = p1 * p2
    if strategy == "pencil":
        if p1 > min(nx, ny) or p2 > min(ny, nz):
            raise DecompositionInfeasibleError(
                f"pencil grid {p1}x{p2} needs p1 <= min(nx, ny) and p2 <= min(ny, nz) for {grid.shape}")
        layouts = tuple(
            _build_layout(grid, s, _PENCIL_SPLITS[s], (p1, p2), s * nranks) for s in range(3))
    elif strategy == "slab":
        if p2 != 1:
            raise DecompositionInfeasibleError("slab decomposition needs a (P, 1) process grid")
        if p1 > min(ny, nz):
            raise DecompositionInfeasibleError(
                f"{p1} slabs exceed min(ny, nz) = {min(ny, nz)}")
        d1 = _build_layout(grid, 0, _SLAB_SPLITS[0], (p1, 1), 0)
        d2 = Layout(1, grid, d1.whole_axes, d1.chunks)  # D2 is D1 for slabs
        d3 = _build_layout(grid, 2, _SLAB_SPLITS[2], (p1, 1), 2 * nranks)
        layouts = (d1, d2, d3)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return DecompositionPlan(grid, strategy, (p1, p2), layouts)


def default_process_grid(grid: GridSpec, strategy: str, nranks: int) -> tuple[int, int]:
    """Most square feasible process grid for ``nranks`` (p1 <= p2 preferred)."""
    if strategy == "slab":
        make_decomposition(grid, "slab", (nranks, 1))
        return (nranks, 1)
    candidates = [(d, nranks // d) for d in range(1, nranks + 1) if nranks % d == 0]
    candidates.sort(key=lambda pg: (abs(pg[0] - pg[1]), pg[0] > pg[1]))
    for pg in candidates:
        try:
            make_decomposition(grid, "pencil", pg)
        except DecompositionInfeasibleError:
            continue
        return pg
    raise DecompositionInfeasibleError(f"no feasible pencil grid for {nranks} ranks on {grid.shape}")


def chunk_of(layout: Layout, rank: int) -> ChunkDescriptor:
    if 0 <= rank < len(layout.chunks):
        c = layout.chunks[rank]
        if c.owner_rank == rank:
            return c
    for c in layout.chunks:
        if c.owner_rank == rank:
            return c
    raise ChunkNotFoundError(f"rank {rank} owns no chunk in stage {layout.stage} layout")


def global_to_local(desc: ChunkDescriptor, gidx) -> int:
    if not desc.box.contains(gidx):
        raise IndexError(f"{tuple(gidx)} outside chunk box {desc.box}")
    (x, y, z), (ox, oy, oz), (ex, ey, _) = gidx, desc.global_offset, desc.extent
    return (x - ox) + ex * ((y - oy) + ey * (z - oz))


def local_to_global(desc: ChunkDescriptor, lidx: int) -> tuple[int, int, int]:
    if not 0 <= lidx < desc.size:
        raise IndexError(f"local index {lidx} outside chunk of size {desc.size}")
    ex, ey, _ = desc.extent
    ox, oy, oz = desc.global_offset
    lx, rest = lidx % ex, lidx // ex
    return (ox + lx, oy + rest % ey, oz + rest // ey)


def chunk_view(buffer: np.ndarray, extent) -> np.ndarray:
    """(x, y, z)-indexed view of a flat x-fastest chunk buffer."""
    return buffer.reshape(tuple(extent), order="F")


@dataclass
class DistributedArray:
    """Stage-owned distributed complex array.

    Only chunks owned by ``ranks`` are allocated locally; for in-process
    simulated ranks that is every rank.
    """

    grid: GridSpec
    layout: Layout
    stage_tag: str
    chunks: dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, grid: GridSpec, layout: Layout, stage_tag: str,
              ranks=None) -> DistributedArray:
        if layout.grid != grid:
            raise InvalidGridError("layout belongs to a different grid")
        ranks = range(len(layout)) if ranks is None else ranks
        chunks = {}
        for r in ranks:
            c = chunk_of(layout, r)
            chunks[c.chunk_id] = np.zeros(c.size, dtype=grid.dtype)
        return cls(grid, layout, stage_tag, chunks)

    def descriptor(self, chunk_id: int) -> ChunkDescriptor:
        return self.layout.by_id(chunk_id)

    def local(self, rank: int) -> np.ndarray:
        return self.chunks[chunk_of(self.layout, rank).chunk_id]

    def view(self, chunk_id: int) -> np.ndarray:
        return chunk_view(self.chunks[chunk_id], self.descriptor(chunk_id).extent)

    def local_descriptors(self) -> list[ChunkDescriptor]:
        return [self.descriptor(cid) for cid in sorted(self.chunks)]
