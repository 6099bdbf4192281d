"""End-to-end distributed 3D FFT over stage arrays A (D1), B (D2) and C (D3).

``task_async`` mode turns every stage into per-chunk tasks on a
:class:`~taskfft.scheduler.TaskScheduler`; a chunk's next-stage FFT becomes
ready as soon as its own redistribution finishes.  ``barrier_sync`` mode runs
the same stages as plain loops with a global barrier after each one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cost import CommCostParams, ComputeModel, comm_cost, fft_work
from .events import EventLog, NullLog
from .grid import (
    DecompositionPlan,
    DistributedArray,
    GridSpec,
    block_partition,
    default_process_grid,
    make_decomposition,
)
from .kernel import FORWARD, INVERSE, PlanCache, PlanKey, apply_fft_view
from .redistribution import (
    RedistWorkspace,
    make_tag,
    make_workspace,
    redistribute_all,
    redistribute_steps,
)
from .scheduler import TaskRecord, TaskScheduler, WorkerState
from .transport import InProcessFabric

MODES = ("task_async", "barrier_sync")
_MODE_ALIASES = {"task": "task_async", "barrier": "barrier_sync"}
GATHER_PHASE = 0xFFFF
BARRIER_PHASE = 0xFFFE


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Stage:
    op: str                 # "fft" or "redist"
    layout: int             # fft: layout index; redist: source layout index
    dst: int | None = None  # redist destination layout index
    axes: tuple = ()
    direction: str = FORWARD
    scale: float = 1.0

    @property
    def name(self) -> str:
        if self.op == "fft":
            return f"fft_{''.join('xyz'[a] for a in self.axes)}"
        return f"redist_{'ABC'[self.layout]}{'ABC'[self.dst]}"


def forward_stages(strategy: str) -> list[Stage]:
    if strategy == "slab":
        return [Stage("fft", 0, axes=(0, 1)), Stage("redist", 0, 2), Stage("fft", 2, axes=(2,))]
    return [Stage("fft", 0, axes=(0,)), Stage("redist", 0, 1), Stage("fft", 1, axes=(1,)),
            Stage("redist", 1, 2), Stage("fft", 2, axes=(2,))]


def inverse_stages(strategy: str, n_total: int) -> list[Stage]:
    out = []
    for st in reversed(forward_stages(strategy)):
        if st.op == "fft":
            out.append(Stage("fft", st.layout, axes=st.axes, direction=INVERSE))
        else:
            out.append(Stage("redist", st.dst, st.layout))
    last = out[-1]
    out[-1] = Stage("fft", last.layout, axes=last.axes, direction=INVERSE, scale=1.0 / n_total)
    return out


@dataclass
class StageTiming:
    name: str
    seconds: float


@dataclass
class TransformReport:
    direction: str
    mode: str
    total_s: float
    t_fft_s: float
    t_redist_s: float
    stages: list[StageTiming] = field(default_factory=list)
    execution: object = None  # ExecutionReport in task mode
    plan_creations: int = 0

    @property
    def t_overhead_s(self) -> float:
        return max(0.0, self.total_s - self.t_fft_s - self.t_redist_s)


@dataclass
class Fft3dContext:
    grid: GridSpec
    plan: DecompositionPlan
    endpoints: dict
    local_ranks: tuple
    mode: str = "task_async"
    workers_per_rank: int = 1
    params: CommCostParams = field(default_factory=CommCostParams)
    plan_cache: PlanCache = field(default_factory=PlanCache)
    log: EventLog = field(default_factory=NullLog)
    compute_model: ComputeModel = field(default_factory=ComputeModel)
    tasks_per_chunk: int = 1
    stealing: bool = False
    rebalance: bool = True
    executor: str = "simulated"
    timing: str = "measured"
    jitter: object = None
    fabric: InProcessFabric | None = None
    arrays: dict = field(default_factory=dict)
    workspaces: dict = field(default_factory=dict)
    _barrier_count: int = 0

    def __post_init__(self):
        self.mode = _MODE_ALIASES.get(self.mode, self.mode)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.tasks_per_chunk < 1 or self.workers_per_rank < 1:
            raise ValueError("tasks_per_chunk and workers_per_rank must be >= 1")

    @property
    def nranks(self) -> int:
        return self.plan.nranks

    @property
    def strategy(self) -> str:
        return self.plan.strategy

    @property
    def tcp(self) -> bool:
        return len(self.local_ranks) < self.nranks

    def array(self, idx: int) -> DistributedArray:
        """Stage array over layout ``idx``; allocated on first use and kept."""
        if idx not in self.arrays:
            self.arrays[idx] = DistributedArray.zeros(self.grid, self.plan.layouts[idx], "ABC"[idx],
                                                      ranks=self.local_ranks)
        return self.arrays[idx]

    @property
    def A(self) -> DistributedArray:
        return self.array(0)

    @property
    def B(self) -> DistributedArray:
        return self.array(1)

    @property
    def C(self) -> DistributedArray:
        return self.array(2)

    def workspace(self, src: int, dst: int) -> dict[int, RedistWorkspace]:
        if (src, dst) not in self.workspaces:
            s, d = self.plan.layouts[src], self.plan.layouts[dst]
            self.workspaces[(src, dst)] = {r: make_workspace(s, d, r, self.grid.dtype)
                                           for r in self.local_ranks}
        return self.workspaces[(src, dst)]

    def make_workers(self) -> list[WorkerState]:
        w = self.workers_per_rank
        return [WorkerState(r * w + u, rank=r) for r in self.local_ranks for u in range(w)]


def create_context(grid: GridSpec, strategy: str = "pencil", nranks: int = 1, *,
                   process_grid=None, endpoints=None, local_ranks=None, **kw) -> Fft3dContext:
    """Build a context; without ``endpoints`` all ranks live in one in-process fabric."""
    if process_grid is None:
        process_grid = default_process_grid(grid, strategy, nranks)
    plan = make_decomposition(grid, strategy, process_grid)
    fabric = None
    if endpoints is None:
        fabric = InProcessFabric(plan.nranks)
        endpoints = {r: fabric.endpoint(r) for r in range(plan.nranks)}
    if local_ranks is None:
        local_ranks = tuple(sorted(endpoints))
    return Fft3dContext(grid, plan, dict(endpoints), tuple(local_ranks), fabric=fabric, **kw)


def phase_id(src: int, dst: int) -> int:
    return 1 + 3 * src + dst


def scatter(x, target: DistributedArray) -> None:
    x = np.asarray(x)
    if x.shape != target.grid.shape:
        raise ShapeMismatchError(f"input shape {x.shape} != grid shape {target.grid.shape}")
    for cid in target.chunks:
        target.view(cid)[...] = x[target.descriptor(cid).box.global_slices()]


def gather(src: DistributedArray) -> np.ndarray:
    """Assemble the locally held chunks into a global array."""
    out = np.zeros(src.grid.shape, dtype=src.grid.dtype)
    for cid in src.chunks:
        out[src.descriptor(cid).box.global_slices()] = src.view(cid)
    return out


def gather_to_root(ctx: Fft3dContext, src: DistributedArray, root: int = 0):
    """Point-to-point gather across processes; the global array on ``root``, None elsewhere."""
    if not ctx.tcp:
        return gather(src)
    (rank,) = ctx.local_ranks
    ep = ctx.endpoints[rank]
    if rank != root:
        for cid in src.chunks:
            ep.wait(ep.isend(root, make_tag(GATHER_PHASE, cid), src.chunks[cid]))
        return None
    out = gather(src)
    for desc in src.layout:
        if desc.owner_rank == rank:
            continue
        buf = np.empty(desc.size, dtype=src.grid.dtype)
        ep.wait(ep.irecv(desc.owner_rank, make_tag(GATHER_PHASE, desc.chunk_id), buf))
        out[desc.box.global_slices()] = buf.reshape(desc.extent, order="F")
    return out


def barrier(ctx: Fft3dContext, root: int = 0) -> None:
    """Global barrier; a no-op when every rank lives in this process."""
    if not ctx.tcp:
        return
    (rank,) = ctx.local_ranks
    ep = ctx.endpoints[rank]
    ctx._barrier_count += 1
    tag = make_tag(BARRIER_PHASE, ctx._barrier_count)
    token = np.zeros(1, dtype=np.uint8)
    if rank == root:
        for r in range(ctx.nranks):
            if r != root:
                ep.wait(ep.irecv(r, tag, np.empty(1, dtype=np.uint8)))
        for r in range(ctx.nranks):
            if r != root:
                ep.wait(ep.isend(r, tag, token))
    else:
        ep.wait(ep.isend(root, tag, token))
        ep.wait(ep.irecv(root, tag, np.empty(1, dtype=np.uint8)))


def _parts(extent, axes, k: int) -> list[tuple]:
    """Split a chunk into ``k`` sub-boxes along its largest non-transform axis."""
    free = [a for a in range(3) if a not in axes]
    if k == 1 or not free:
        return [tuple(slice(0, e) for e in extent)]
    axis = max(free, key=lambda a: (extent[a], -a))
    out = []
    for start, length in block_partition(extent[axis], min(k, extent[axis])):
        sl = [slice(0, e) for e in extent]
        sl[axis] = slice(start, start + length)
        out.append(tuple(sl))
    return out


def _part_extent(sl) -> tuple[int, int, int]:
    return tuple(s.stop - s.start for s in sl)


def _fft_runner(ctx: Fft3dContext, arr: DistributedArray, cid: int, sl, st: Stage):
    ext = _part_extent(sl)

    def run():
        plan = ctx.plan_cache.get_or_create_plan(
            PlanKey.for_chunk(ctx.grid.dtype, ext, st.axes, st.direction))
        apply_fft_view(plan, arr.view(cid)[sl], st.axes, st.scale)
    return run


def _fft_cost(ctx: Fft3dContext, ext, axes) -> float:
    vol = int(np.prod(ext))
    return sum(ctx.compute_model.estimate(ext[a], vol // ext[a]) for a in axes)


def _chunk_parts(ctx: Fft3dContext, stages, layout: int):
    """Part slices per local chunk of ``layout``, using its FFT stage's axes."""
    axes = next(st.axes for st in stages if st.op == "fft" and st.layout == layout)
    arr = ctx.array(layout)
    return {cid: _parts(arr.descriptor(cid).extent, axes, ctx.tasks_per_chunk) for cid in arr.chunks}


def build_tasks(ctx: Fft3dContext, stages, sched: TaskScheduler) -> list[TaskRecord]:
    """Per-chunk task graph for ``stages``; registers every chunk part key with ``sched``."""
    itemsize = ctx.grid.dtype.itemsize
    layouts = sorted({st.layout for st in stages} | {st.dst for st in stages if st.dst is not None})
    parts = {l: _chunk_parts(ctx, stages, l) for l in layouts}
    for l in layouts:
        arr = ctx.array(l)
        for cid, pl in parts[l].items():
            owner = arr.descriptor(cid).owner_rank
            for k, sl in enumerate(pl):
                sched.register_chunk((cid, k), owner, int(np.prod(_part_extent(sl))) * itemsize)
    tasks = []
    for st in stages:
        if st.op == "fft":
            arr = ctx.array(st.layout)
            kind = "fft_1d" if len(st.axes) == 1 else "fft_2d"
            for cid in sorted(arr.chunks):
                for k, sl in enumerate(parts[st.layout][cid]):
                    key = (cid, k)
                    tasks.append(TaskRecord(
                        len(tasks), kind, reads=[key], writes=[key], affinity_chunk=key,
                        cost_estimate=_fft_cost(ctx, _part_extent(sl), st.axes),
                        payload=_fft_runner(ctx, arr, cid, sl, st), in_place=True,
                        name=f"{st.name}[{cid}.{k}]"))
        else:
            src, dst = ctx.array(st.layout), ctx.array(st.dst)
            wss = ctx.workspace(st.layout, st.dst)
            pid = phase_id(st.layout, st.dst)
            for r in ctx.local_ranks:
                scid = src.layout.chunk_of(r).chunk_id
                dcid = dst.layout.chunk_of(r).chunk_id
                ws = wss[r]
                nbytes = sum(ws.plan.send_volume(p) for p in ws.plan.send_ranks) * itemsize
                reads = [(scid, k) for k in range(len(parts[st.layout][scid]))]
                writes = [(dcid, k) for k in range(len(parts[st.dst][dcid]))]
                tasks.append(TaskRecord(
                    len(tasks), "generic", reads=reads, writes=writes, affinity_chunk=writes[0],
                    cost_estimate=comm_cost(ctx.params, len(ws.plan.send_ranks), nbytes),
                    payload=_redist_runner(ctx, src, dst, ws, r, pid), stealable=False,
                    nbytes=nbytes, name=f"{st.name}[{r}]"))
    return tasks


def _redist_runner(ctx, src, dst, ws, rank, pid):
    def run():
        return redistribute_steps(src, dst, ws, ctx.endpoints[rank], phase_id=pid, log=ctx.log)
    return run


def _run_tasks(ctx: Fft3dContext, stages, direction: str) -> TransformReport:
    created = ctx.plan_cache.creations
    t0 = time.perf_counter()
    sched = TaskScheduler(ctx.make_workers(), ctx.params, log=ctx.log, rebalance=ctx.rebalance)
    sched.spawn(build_tasks(ctx, stages, sched))
    rep = sched.run(stealing=ctx.stealing, executor=ctx.executor, timing=ctx.timing, jitter=ctx.jitter)
    total = time.perf_counter() - t0
    kinds = rep.time_by_kind
    t_fft = kinds.get("fft_1d", 0.0) + kinds.get("fft_2d", 0.0)
    t_redist = kinds.get("generic", 0.0)
    return TransformReport(direction, ctx.mode, total, t_fft, min(t_redist, total - t_fft),
                           execution=rep, plan_creations=ctx.plan_cache.creations - created)


def _run_barrier(ctx: Fft3dContext, stages, direction: str) -> TransformReport:
    created = ctx.plan_cache.creations
    timings = []
    t_start = time.perf_counter()
    t_fft = t_redist = 0.0
    for st in stages:
        t0 = time.perf_counter()
        if st.op == "fft":
            arr = ctx.array(st.layout)
            for cid in sorted(arr.chunks):
                whole = tuple(slice(0, e) for e in arr.descriptor(cid).extent)
                _fft_runner(ctx, arr, cid, whole, st)()
        else:
            redistribute_all(ctx.array(st.layout), ctx.array(st.dst), ctx.workspace(st.layout, st.dst),
                             ctx.endpoints, phase_id=phase_id(st.layout, st.dst), log=ctx.log,
                             progressive=False, poll_sleep=1e-5 if ctx.tcp else 0.0)
        work = time.perf_counter() - t0
        barrier(ctx)
        dt = time.perf_counter() - t0
        if st.op == "fft":
            t_fft += work
        else:
            t_redist += work
        timings.append(StageTiming(st.name, dt))
    total = time.perf_counter() - t_start
    return TransformReport(direction, "barrier_sync", total, t_fft, t_redist, stages=timings,
                           plan_creations=ctx.plan_cache.creations - created)


def _run(ctx: Fft3dContext, stages, direction: str, mode: str | None = None) -> TransformReport:
    mode = _MODE_ALIASES.get(mode, mode) or ctx.mode
    if mode == "barrier_sync":
        return _run_barrier(ctx, stages, direction)
    return _run_tasks(ctx, stages, direction)


def fft3d_forward(ctx: Fft3dContext, mode: str | None = None) -> TransformReport:
    """Unnormalized forward transform of A; the spectrum ends up in C."""
    ctx.array(0), ctx.array(2)
    return _run(ctx, forward_stages(ctx.strategy), FORWARD, mode)


def fft3d_inverse(ctx: Fft3dContext, mode: str | None = None) -> TransformReport:
    """Normalized inverse of C; the field ends up in A."""
    return _run(ctx, inverse_stages(ctx.strategy, ctx.grid.size), INVERSE, mode)


def forward(ctx: Fft3dContext, x, mode: str | None = None):
    """Scatter ``x``, transform, gather.  Returns (spectrum, report)."""
    scatter(x, ctx.A)
    rep = fft3d_forward(ctx, mode)
    return gather_to_root(ctx, ctx.C), rep


def inverse(ctx: Fft3dContext, xk, mode: str | None = None):
    scatter(xk, ctx.C)
    rep = fft3d_inverse(ctx, mode)
    return gather_to_root(ctx, ctx.A), rep


def run_barrier_baseline(ctx: Fft3dContext, x):
    """Forward transform with a barrier after every stage; returns (spectrum, report)."""
    return forward(ctx, x, mode="barrier_sync")


def forward_work(ctx: Fft3dContext) -> float:
    """Total N log N work units of one forward transform over the local chunks."""
    total = 0.0
    for st in forward_stages(ctx.strategy):
        if st.op != "fft":
            continue
        for desc in ctx.array(st.layout).local_descriptors():
            vol = desc.size
            total += sum(fft_work(desc.extent[a], vol // desc.extent[a]) for a in st.axes)
    return total


def warm_up(ctx: Fft3dContext, x) -> TransformReport:
    """One untimed forward run: builds plans, sizes workspaces, fits the compute model."""
    _, rep = forward(ctx, x)
    ctx.compute_model.fit(rep.t_fft_s, forward_work(ctx))
    return rep


def random_field(grid: GridSpec, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    re = rng.standard_normal(grid.shape)
    im = rng.standard_normal(grid.shape)
    return (re + 1j * im).astype(grid.dtype)
