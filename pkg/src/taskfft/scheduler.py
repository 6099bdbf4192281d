"""Per-chunk dependency tracking, affinity placement and gated work stealing.

Tasks declare the chunk keys they read and write.  Ordering follows the
submission order under a readers-writer discipline per key, which is all the
FFT pipeline needs: chunks never alias.

Two executors share the same queues and placement:

``simulated``
    single-threaded discrete-event run.  Tasks really execute, one at a time,
    and their measured (or modelled) duration advances a virtual clock per
    worker.  The event with the earliest virtual start always runs next, so
    busy times are free of OS scheduling noise.
``threaded``
    one OS thread per worker with real wall-clock timing.

A payload may return a generator; each ``yield`` hands the worker back to
the scheduler (cooperative polling).  A yielded ``True`` means the step made
progress.  Started generator tasks stay pinned to their worker.
"""

from __future__ import annotations

import inspect
import math
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Hashable

import numpy as np

from .cost import CommCostParams, placement_cost, steal_cost, steal_worthwhile
from .events import EventLog, NullLog, set_current_worker

TASK_KINDS = ("fft_1d", "fft_2d", "pack", "unpack", "local_copy", "generic")
DEFAULT_CV_THRESHOLD = 0.2  # rebalance when std/mean of loads exceeds 20%
IDLE_EMA_WEIGHT = 0.5


class UnknownChunkError(KeyError):
    pass


class DeadlockError(RuntimeError):
    pass


@dataclass(eq=False)
class TaskRecord:
    task_id: int
    kind: str
    reads: frozenset = frozenset()
    writes: frozenset = frozenset()
    affinity_chunk: Hashable | None = None
    cost_estimate: float = 0.0
    payload: Callable | None = None
    in_place: bool = False
    stealable: bool = True
    nbytes: int = 0
    name: str = ""
    state: str = "pending"

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        self.reads = frozenset(self.reads)
        self.writes = frozenset(self.writes)
        if (self.reads & self.writes) and not self.in_place:
            raise ValueError(f"task {self.task_id} reads and writes {set(self.reads & self.writes)} "
                             "without being declared in-place")
        if self.cost_estimate < 0:
            raise ValueError("cost_estimate must be >= 0")

    @property
    def keys(self) -> frozenset:
        return self.reads | self.writes


@dataclass(eq=False)
class WorkerState:
    worker_id: int
    rank: int = 0
    local_queue: deque = field(default_factory=deque)
    load_estimate: float = 0.0
    executed_count: int = 0
    busy_time: float = 0.0
    idle_estimate: float = math.inf  # I_q
    clock: float = 0.0
    idle_since: float | None = None

    def finish(self, task: TaskRecord) -> None:
        self.load_estimate = max(0.0, self.load_estimate - task.cost_estimate)

    def observe_gap(self, gap: float) -> None:
        gap = max(0.0, gap)
        if math.isinf(self.idle_estimate):
            self.idle_estimate = gap
        else:
            self.idle_estimate = IDLE_EMA_WEIGHT * gap + (1 - IDLE_EMA_WEIGHT) * self.idle_estimate

    def reset(self) -> None:
        self.local_queue.clear()
        self.executed_count = 0
        self.busy_time = 0.0
        self.idle_estimate = math.inf
        self.clock = 0.0
        self.idle_since = None


def make_workers(nranks: int, per_rank: int = 1) -> list[WorkerState]:
    return [WorkerState(r * per_rank + u, rank=r) for r in range(nranks) for u in range(per_rank)]


class Assignment(dict):
    """task_id -> worker_id."""


@dataclass(frozen=True)
class ChunkInfo:
    owner: int
    nbytes: int = 0


class DepTracker:
    """Readers-writer ordering per chunk key, in submission order."""

    def __init__(self):
        self._lock = threading.RLock()
        self.chunks: dict[Hashable, ChunkInfo] = {}
        self.tasks: dict[int, TaskRecord] = {}
        self.order: list[int] = []
        self.preds: dict[int, frozenset] = {}
        self._last_writer: dict[Hashable, int | None] = {}
        self._readers: dict[Hashable, set] = {}
        self._blocking: dict[int, int] = {}
        self._dependents: dict[int, list[int]] = defaultdict(list)
        self.done: set[int] = set()
        self.ready: deque[TaskRecord] = deque()

    def register_chunk(self, key: Hashable, owner: int, nbytes: int = 0) -> None:
        with self._lock:
            self.chunks[key] = ChunkInfo(owner, nbytes)
            self._last_writer.setdefault(key, None)
            self._readers.setdefault(key, set())

    def owner_of(self, key: Hashable) -> int:
        return self.chunks[key].owner

    def submit(self, task: TaskRecord) -> bool:
        """Enqueue ``task``; returns True if it is ready immediately."""
        with self._lock:
            unknown = [k for k in task.keys if k not in self.chunks]
            if unknown:
                raise UnknownChunkError(f"task {task.task_id} references unknown chunks {unknown}")
            if task.task_id in self.tasks:
                raise ValueError(f"duplicate task id {task.task_id}")
            preds = set()
            for k in task.reads:
                w = self._last_writer[k]
                if w is not None and w not in self.done:
                    preds.add(w)
            for k in task.writes:
                w = self._last_writer[k]
                if w is not None and w not in self.done:
                    preds.add(w)
                preds.update(r for r in self._readers[k] if r not in self.done)
            preds.discard(task.task_id)
            for k in task.reads - task.writes:
                self._readers[k].add(task.task_id)
            for k in task.writes:
                self._last_writer[k] = task.task_id
                self._readers[k] = set()
            self.tasks[task.task_id] = task
            self.order.append(task.task_id)
            self.preds[task.task_id] = frozenset(preds)
            self._blocking[task.task_id] = len(preds)
            for p in preds:
                self._dependents[p].append(task.task_id)
            if not preds:
                self.ready.append(task)
                return True
            return False

    def complete(self, task_id: int) -> list[TaskRecord]:
        """Mark ``task_id`` done; returns the tasks it unblocked."""
        with self._lock:
            if task_id in self.done:
                raise RuntimeError(f"task {task_id} completed twice")
            self.done.add(task_id)
            newly = []
            for d in self._dependents.pop(task_id, ()):
                self._blocking[d] -= 1
                if self._blocking[d] == 0:
                    newly.append(self.tasks[d])
            self.ready.extend(newly)
            return newly

    def drain_ready(self) -> list[TaskRecord]:
        with self._lock:
            out = list(self.ready)
            self.ready.clear()
            return out

    @property
    def pending(self) -> int:
        return len(self.tasks) - len(self.done)


def load_variance(workers) -> float:
    if not workers:
        return 0.0
    return float(np.var([w.load_estimate for w in workers]))


def default_threshold(workers) -> float:
    mean = float(np.mean([w.load_estimate for w in workers])) if workers else 0.0
    return (DEFAULT_CV_THRESHOLD * mean) ** 2


def place(tasks, workers, owner_of: Callable[[Hashable], int], params: CommCostParams | None = None,
          *, rebalance: bool = True, threshold: float | None = None) -> Assignment:
    """Affinity-first placement, then variance-triggered rebalance.

    A task goes to the least-loaded worker of the rank owning its affinity
    chunk (ties by worker id).  Tasks with no affine worker go to the
    globally least-loaded worker and pay the remote transfer term.
    """
    if not workers:
        raise ValueError("place() needs at least one worker")
    params = params or CommCostParams()
    by_rank = defaultdict(list)
    for w in workers:
        by_rank[w.rank].append(w)
    assignment = Assignment()
    for t in tasks:
        owner = owner_of(t.affinity_chunk) if t.affinity_chunk is not None else None
        cands = by_rank.get(owner) or workers
        best = cands[0]
        for w in cands[1:]:
            if (w.load_estimate, w.worker_id) < (best.load_estimate, best.worker_id):
                best = w
        remote = 0 if best.rank == owner else t.nbytes
        best.load_estimate += placement_cost(t.cost_estimate, params, remote)
        assignment[t.task_id] = best.worker_id
    if rebalance:
        assignment = maybe_rebalance(assignment, workers, threshold, tasks=tasks,
                                     params=params, owner_of=owner_of)
    return assignment


def maybe_rebalance(assignment: Assignment, workers, threshold: float | None = None, *,
                    tasks=(), params: CommCostParams | None = None,
                    owner_of: Callable | None = None) -> Assignment:
    """Greedy migration of pending tasks from the most- to the least-loaded worker.

    Stops once the load variance is within ``threshold`` or the next move
    would not reduce it.  Only stealable tasks in state ``pending`` move.
    """
    if len(workers) < 2:
        return assignment
    if threshold is None:
        threshold = default_threshold(workers)
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    n = len(workers)
    loads = {w.worker_id: w.load_estimate for w in workers}
    total = sum(loads.values())
    sumsq = sum(v * v for v in loads.values())

    def var(s, sq):
        return sq / n - (s / n) ** 2

    if var(total, sumsq) <= threshold:
        return assignment
    params = params or CommCostParams()
    wmap = {w.worker_id: w for w in workers}
    stacks = defaultdict(list)
    for t in tasks:
        if t.state == "pending" and t.stealable and t.task_id in assignment:
            stacks[assignment[t.task_id]].append(t)
    out = Assignment(assignment)
    while var(total, sumsq) > threshold:
        a = max(loads, key=lambda k: (loads[k], -k))
        b = min(loads, key=lambda k: (loads[k], k))
        if a == b or not stacks[a]:
            break
        t = stacks[a][-1]
        owner = owner_of(t.affinity_chunk) if (owner_of and t.affinity_chunk is not None) else None
        cost_a = placement_cost(t.cost_estimate, params, 0 if wmap[a].rank == owner else t.nbytes)
        cost_b = placement_cost(t.cost_estimate, params, 0 if wmap[b].rank == owner else t.nbytes)
        la, lb = loads[a] - cost_a, loads[b] + cost_b
        new_sumsq = sumsq - loads[a] ** 2 - loads[b] ** 2 + la * la + lb * lb
        new_total = total - cost_a + cost_b
        if var(new_total, new_sumsq) >= var(total, sumsq):
            break
        stacks[a].pop()
        stacks[b].append(t)
        out[t.task_id] = b
        loads[a], loads[b] = la, lb
        total, sumsq = new_total, new_sumsq
    for wid, v in loads.items():
        wmap[wid].load_estimate = max(0.0, v)
    return out


def try_steal(thief: WorkerState, victims, params: CommCostParams,
              eligible: Callable[[TaskRecord], bool] | None = None) -> TaskRecord | None:
    """Take the tail-most stealable task from the most-loaded victim that passes I_q > tau_s."""
    if thief.local_queue:
        raise ValueError("only an idle worker (empty local queue) may steal")
    for v in sorted(victims, key=lambda v: (-v.load_estimate, v.worker_id)):
        if v is thief:
            continue
        for i in range(len(v.local_queue) - 1, -1, -1):
            t = v.local_queue[i]
            if not t.stealable or t.state != "queued":
                continue
            if eligible is not None and not eligible(t):
                continue
            if steal_worthwhile(thief.idle_estimate, params, t.nbytes):
                del v.local_queue[i]
                return t
            break
    return None


@dataclass
class ExecutionReport:
    busy_time: list[float]
    executed_count: list[int]
    wall_time: float
    steal_count: int = 0
    real_time: float = 0.0
    time_by_kind: dict = field(default_factory=dict)
    steals: list = field(default_factory=list)

    @property
    def imbalance(self) -> float:
        """std(per-worker busy time) / mean, in percent."""
        if not self.busy_time:
            return 0.0
        mean = float(np.mean(self.busy_time))
        if mean == 0:
            return 0.0
        return float(np.std(self.busy_time)) / mean * 100.0

    @property
    def total_tasks(self) -> int:
        return sum(self.executed_count)

    @property
    def avg_tasks(self) -> float:
        return self.total_tasks / len(self.executed_count) if self.executed_count else 0.0

    def summary(self) -> dict:
        return {
            "total_time_s": self.wall_time,
            "imbalance_pct": self.imbalance,
            "max_busy_s": max(self.busy_time, default=0.0),
            "min_busy_s": min(self.busy_time, default=0.0),
            "avg_tasks_per_worker": self.avg_tasks,
            "steal_count": self.steal_count,
        }


class TaskScheduler:
    """Binds a tracker, a worker set and placement for one batch of work."""

    def __init__(self, workers, params: CommCostParams | None = None, *, log: EventLog | None = None,
                 rebalance: bool = True, threshold: float | None = None, rank_of_worker=None):
        self.workers = list(workers)
        self.params = params or CommCostParams()
        self.log = log if log is not None else NullLog()
        self.rebalance = rebalance
        self.threshold = threshold
        self.tracker = DepTracker()
        self.assignment = Assignment()
        self._wmap = {w.worker_id: w for w in self.workers}

    def register_chunk(self, key, owner: int, nbytes: int = 0) -> None:
        self.tracker.register_chunk(key, owner, nbytes)

    def spawn(self, tasks) -> Assignment:
        tasks = list(tasks)
        for t in tasks:
            if not t.nbytes:
                t.nbytes = sum(self.tracker.chunks[k].nbytes for k in t.keys if k in self.tracker.chunks)
        placed = place(tasks, self.workers, self.tracker.owner_of, self.params,
                       rebalance=self.rebalance, threshold=self.threshold)
        self.assignment.update(placed)
        for t in tasks:
            self.tracker.submit(t)
            self.log.emit("submit", task=t.task_id, worker=placed[t.task_id],
                          rank=self._wmap[placed[t.task_id]].rank)
        return placed

    def run(self, stealing: bool = False, executor: str = "simulated", timing: str = "measured",
            jitter: Callable | None = None, stall_timeout: float = 30.0) -> ExecutionReport:
        for w in self.workers:
            w.reset()
        if executor == "simulated":
            return _Simulation(self, stealing, timing, jitter, stall_timeout).run()
        if executor == "threaded":
            return _Threaded(self, stealing, stall_timeout).run()
        raise ValueError(f"unknown executor {executor!r}")


def run_to_completion(scheduler: TaskScheduler, stealing: bool = False, **kw) -> ExecutionReport:
    return scheduler.run(stealing=stealing, **kw)


def _start_payload(task: TaskRecord):
    """Run the first step. Returns (generator or None, finished, progress)."""
    res = task.payload() if task.payload is not None else None
    if inspect.isgenerator(res):
        return _resume(res)
    return None, True, True


def _resume(gen):
    try:
        progress = next(gen)
    except StopIteration:
        return None, True, True
    return gen, False, bool(progress)


class _Simulation:
    def __init__(self, sched: TaskScheduler, stealing: bool, timing: str, jitter, stall_timeout):
        if timing not in ("measured", "estimate"):
            raise ValueError(f"unknown timing mode {timing!r}")
        self.s = sched
        self.stealing = stealing
        self.timing = timing
        self.jitter = jitter
        self.stall_timeout = stall_timeout
        self.ready_at: dict[int, float] = {}
        self.finish: dict[int, float] = {}
        self.parked: dict[int, list] = {}  # task_id -> [worker, task, gen, resume_at, dormant]
        self.time_by_kind = defaultdict(float)
        self.steals = []
        self.declined: set[int] = set()

    def enqueue(self, task: TaskRecord, t_ready: float) -> None:
        s = self.s
        w = s._wmap[s.assignment[task.task_id]]
        if not w.local_queue and w.idle_since is not None:
            w.observe_gap(t_ready - w.idle_since)
            w.idle_since = None
        task.state = "queued"
        w.local_queue.append(task)
        self.ready_at[task.task_id] = t_ready
        s.log.emit("ready", task=task.task_id, worker=w.worker_id, rank=w.rank)

    def duration(self, task: TaskRecord, measured: float, first: bool) -> float:
        d = measured
        if self.timing == "estimate":
            d = task.cost_estimate if first else 0.0
        if self.jitter is not None:
            d = max(0.0, d + self.jitter(task))
        return d

    def step(self, w: WorkerState, task: TaskRecord, start: float, gen=None):
        s = self.s
        set_current_worker(w.worker_id)
        first = gen is None
        if first:
            task.state = "running"
            s.log.emit("start", task=task.task_id, worker=w.worker_id, rank=w.rank)
        t0 = time.perf_counter()
        try:
            gen, finished, progress = _start_payload(task) if first else _resume(gen)
        finally:
            set_current_worker(None)
        measured = time.perf_counter() - t0
        self.time_by_kind[task.kind] += measured
        d = self.duration(task, measured, first)
        w.clock = start + d
        w.busy_time += d
        if finished:
            self.parked.pop(task.task_id, None)
            self.complete(w, task)
        else:
            self.parked[task.task_id] = [w, task, gen, w.clock, not progress]
        return finished or progress

    def complete(self, w: WorkerState, task: TaskRecord) -> None:
        s = self.s
        task.state = "done"
        w.executed_count += 1
        s._wmap[s.assignment[task.task_id]].finish(task)
        self.finish[task.task_id] = w.clock
        s.log.emit("complete", task=task.task_id, worker=w.worker_id, rank=w.rank)
        for n in s.tracker.complete(task.task_id):
            preds = s.tracker.preds[n.task_id]
            self.enqueue(n, max((self.finish[p] for p in preds), default=0.0))
        s.tracker.drain_ready()
        if not w.local_queue:
            w.idle_since = w.clock

    def wake(self, t_event: float, exclude=None) -> None:
        for tid, entry in self.parked.items():
            if tid != exclude and entry[4]:
                entry[4] = False
                entry[3] = max(entry[3], t_event)
        self.declined.clear()

    def candidates(self):
        s = self.s
        best = None
        for w in s.workers:
            if w.local_queue:
                t = min(w.local_queue, key=lambda t: self.ready_at[t.task_id])
                c = (max(w.clock, self.ready_at[t.task_id]), 0, w.worker_id, "local", t)
            elif self.stealing and w.worker_id not in self.declined:
                earliest = min((self.ready_at[t.task_id] for v in s.workers if v is not w
                                for t in v.local_queue if t.stealable and t.state == "queued"),
                               default=None)
                if earliest is None:
                    continue
                c = (max(w.clock, earliest), 1, w.worker_id, "steal", None)
            else:
                continue
            if best is None or c[:3] < best[:3]:
                best = c
        for tid, (w, task, gen, resume_at, dormant) in self.parked.items():
            if dormant:
                continue
            c = (max(w.clock, resume_at), 2, w.worker_id, "resume", task)
            if best is None or c[:3] < best[:3]:
                best = c
        return best

    def run(self) -> ExecutionReport:
        s = self.s
        for t in s.tracker.drain_ready():
            self.enqueue(t, 0.0)
        t_real = time.perf_counter()
        last_progress = t_real
        while s.tracker.pending:
            c = self.candidates()
            if c is None:
                if not self.parked:
                    raise DeadlockError(f"{s.tracker.pending} tasks can never become ready")
                if time.perf_counter() - last_progress > self.stall_timeout:
                    raise DeadlockError("cooperative tasks made no progress before the stall timeout")
                time.sleep(5e-5)  # waiting on wall-clock message delivery
                self.wake(0.0)
                continue
            start, _, wid, what, task = c
            w = s._wmap[wid]
            if what == "local":
                w.local_queue.remove(task)
                progressed = self.step(w, task, start)
                self.wake(w.clock, exclude=task.task_id)
            elif what == "resume":
                progressed = self.step(w, task, start, self.parked[task.task_id][2])
                if progressed:
                    self.wake(w.clock, exclude=task.task_id)
            else:
                stolen = try_steal(w, s.workers, s.params,
                                   eligible=lambda t: self.ready_at[t.task_id] <= start)
                if stolen is None:
                    self.declined.add(wid)
                    continue
                tau = steal_cost(s.params, stolen.nbytes)
                victim = s.assignment[stolen.task_id]
                rec = s.log.emit("steal", task=stolen.task_id, worker=wid, rank=w.rank, peer=victim,
                                 nbytes=stolen.nbytes, i_q=w.idle_estimate, tau_s=tau)
                self.steals.append(rec or {"task": stolen.task_id, "i_q": w.idle_estimate, "tau_s": tau})
                w.busy_time += tau
                progressed = self.step(w, stolen, start + tau)
                self.wake(w.clock, exclude=stolen.task_id)
            if progressed:
                last_progress = time.perf_counter()
        real = time.perf_counter() - t_real
        return ExecutionReport(
            busy_time=[w.busy_time for w in s.workers],
            executed_count=[w.executed_count for w in s.workers],
            wall_time=max((w.clock for w in s.workers), default=0.0),
            steal_count=len(self.steals),
            real_time=real,
            time_by_kind=dict(self.time_by_kind),
            steals=self.steals,
        )


class _Threaded:
    def __init__(self, sched: TaskScheduler, stealing: bool, stall_timeout: float):
        self.s = sched
        self.stealing = stealing
        self.stall_timeout = stall_timeout
        self.cond = threading.Condition()
        self.gens: dict[int, object] = {}
        self.in_flight = 0
        self.error: BaseException | None = None
        self.steals = []
        self.time_by_kind = defaultdict(float)
        self.t0 = time.monotonic()
        self.last_progress = self.t0

    def now(self) -> float:
        return time.monotonic() - self.t0

    def enqueue(self, task: TaskRecord) -> None:
        s = self.s
        w = s._wmap[s.assignment[task.task_id]]
        if not w.local_queue and w.idle_since is not None:
            w.observe_gap(self.now() - w.idle_since)
            w.idle_since = None
        task.state = "queued"
        w.local_queue.append(task)
        s.log.emit("ready", task=task.task_id, worker=w.worker_id, rank=w.rank)

    def next_task(self, w: WorkerState):
        s = self.s
        while True:
            if self.error is not None or s.tracker.pending == 0:
                return None
            if w.local_queue:
                return w.local_queue.popleft(), False
            if self.stealing:
                t = try_steal(w, s.workers, s.params)
                if t is not None:
                    tau = steal_cost(s.params, t.nbytes)
                    rec = s.log.emit("steal", task=t.task_id, worker=w.worker_id, rank=w.rank,
                                     peer=s.assignment[t.task_id], nbytes=t.nbytes,
                                     i_q=w.idle_estimate, tau_s=tau)
                    self.steals.append(rec or {"task": t.task_id, "i_q": w.idle_estimate, "tau_s": tau})
                    return t, True
            queued = any(v.local_queue for v in s.workers)
            if not queued and self.in_flight == 0:
                self.error = DeadlockError(f"{s.tracker.pending} tasks can never become ready")
                self.cond.notify_all()
                return None
            if time.monotonic() - self.last_progress > self.stall_timeout:
                self.error = DeadlockError("no progress before the stall timeout")
                self.cond.notify_all()
                return None
            self.cond.wait(timeout=0.01)

    def worker_loop(self, w: WorkerState) -> None:
        s = self.s
        while True:
            with self.cond:
                got = self.next_task(w)
                if got is None:
                    return
                task, _stolen = got
                self.in_flight += 1
                first = task.task_id not in self.gens
                if first:
                    task.state = "running"
                    s.log.emit("start", task=task.task_id, worker=w.worker_id, rank=w.rank)
            set_current_worker(w.worker_id)
            t0 = time.perf_counter()
            try:
                gen, finished, progress = (_start_payload(task) if first
                                           else _resume(self.gens[task.task_id]))
            except BaseException as exc:  # surfaced to run()
                with self.cond:
                    self.error = exc
                    self.in_flight -= 1
                    self.cond.notify_all()
                return
            finally:
                set_current_worker(None)
            dt = time.perf_counter() - t0
            with self.cond:
                self.in_flight -= 1
                w.busy_time += dt
                self.time_by_kind[task.kind] += dt
                if finished:
                    self.gens.pop(task.task_id, None)
                    task.state = "done"
                    w.executed_count += 1
                    s._wmap[s.assignment[task.task_id]].finish(task)
                    s.log.emit("complete", task=task.task_id, worker=w.worker_id, rank=w.rank)
                    for n in s.tracker.complete(task.task_id):
                        self.enqueue(n)
                    s.tracker.drain_ready()
                    if not w.local_queue:
                        w.idle_since = self.now()
                else:
                    self.gens[task.task_id] = gen
                    w.local_queue.append(task)  # pinned: state stays "running"
                if finished or progress:
                    self.last_progress = time.monotonic()
                self.cond.notify_all()
            if not finished and not progress:
                time.sleep(1e-4)

    def run(self) -> ExecutionReport:
        s = self.s
        with self.cond:
            for t in s.tracker.drain_ready():
                self.enqueue(t)
        threads = [threading.Thread(target=self.worker_loop, args=(w,), daemon=True)
                   for w in s.workers]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        if self.error is not None:
            raise self.error
        wall = self.now()
        return ExecutionReport(
            busy_time=[w.busy_time for w in s.workers],
            executed_count=[w.executed_count for w in s.workers],
            wall_time=wall,
            steal_count=len(self.steals),
            real_time=wall,
            time_by_kind=dict(self.time_by_kind),
            steals=self.steals,
        )


def validate_event_log(records, tasks: dict[int, TaskRecord], order) -> list[str]:
    """Independent replay check of exactly-once execution and per-key ordering.

    ``order`` is the submission order.  For every pair of tasks sharing a key
    where at least one writes it, the earlier-submitted task must complete
    before the later one starts.  Returns a list of violations.
    """
    starts, completes = defaultdict(list), defaultdict(list)
    for i, r in enumerate(records):
        if r["event"] == "start":
            starts[r["task"]].append(i)
        elif r["event"] == "complete":
            completes[r["task"]].append(i)
    problems = []
    for tid in order:
        if len(starts[tid]) != 1 or len(completes[tid]) != 1:
            problems.append(f"task {tid}: {len(starts[tid])} starts, {len(completes[tid])} completes")
    if problems:
        return problems
    pos = {tid: i for i, tid in enumerate(order)}
    by_key = defaultdict(list)
    for tid in order:
        for k in tasks[tid].keys:
            by_key[k].append(tid)
    for k, tids in by_key.items():
        for i, a in enumerate(tids):
            for b in tids[i + 1:]:
                ta, tb = tasks[a], tasks[b]
                if k in ta.writes or k in tb.writes:
                    first, second = (a, b) if pos[a] < pos[b] else (b, a)
                    if completes[first][0] > starts[second][0]:
                        problems.append(f"key {k}: task {second} started before {first} completed")
    return problems
