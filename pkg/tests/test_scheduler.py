import random
import statistics
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskfft.cost import CommCostParams, steal_cost
from taskfft.events import EventLog
from taskfft.scheduler import (
    Assignment,
    DeadlockError,
    DepTracker,
    TaskRecord,
    TaskScheduler,
    UnknownChunkError,
    WorkerState,
    make_workers,
    maybe_rebalance,
    place,
    run_to_completion,
    try_steal,
    validate_event_log,
)


def tracker(*keys):
    t = DepTracker()
    for k in keys:
        t.register_chunk(k, 0)
    return t


def test_disjoint_writers_ready_immediately():
    t = tracker(1, 2)
    assert t.submit(TaskRecord(0, "generic", writes=[1]))
    assert t.submit(TaskRecord(1, "generic", writes=[2]))


def test_raw_dependency():
    t = tracker(5)
    assert t.submit(TaskRecord(0, "generic", writes=[5]))
    assert not t.submit(TaskRecord(1, "generic", reads=[5]))
    assert [x.task_id for x in t.complete(0)] == [1]


def test_war_dependency():
    t = tracker(5)
    t.submit(TaskRecord(0, "generic", reads=[5]))
    assert not t.submit(TaskRecord(1, "generic", writes=[5]))
    assert [x.task_id for x in t.complete(0)] == [1]


def test_concurrent_readers_then_writer():
    t = tracker(5)
    assert t.submit(TaskRecord(0, "generic", reads=[5]))
    assert t.submit(TaskRecord(1, "generic", reads=[5]))
    assert not t.submit(TaskRecord(2, "generic", writes=[5]))
    assert t.complete(0) == []
    assert [x.task_id for x in t.complete(1)] == [2]


def test_unknown_chunk():
    with pytest.raises(UnknownChunkError):
        tracker(1).submit(TaskRecord(0, "generic", reads=[99]))


def test_in_place_flag_required():
    with pytest.raises(ValueError):
        TaskRecord(0, "fft_1d", reads=[1], writes=[1])
    TaskRecord(0, "fft_1d", reads=[1], writes=[1], in_place=True)


def _tasks(owners, cost=1.0):
    return [TaskRecord(i, "generic", writes=[("c", i)], affinity_chunk=("c", i), cost_estimate=cost)
            for i in range(len(owners))]


def test_place_pure_affinity():
    ws = make_workers(4)
    owners = {("c", i): i for i in range(4)}
    a = place(_tasks(owners), ws, owners.__getitem__)
    assert a == {0: 0, 1: 1, 2: 2, 3: 3}
    assert [w.load_estimate for w in ws] == [1, 1, 1, 1]


def test_place_same_owner_accumulates():
    ws = make_workers(2)
    owners = {("c", 0): 0, ("c", 1): 0}
    a = place(_tasks(owners), ws, owners.__getitem__, rebalance=False)
    assert a == {0: 0, 1: 0} and ws[0].load_estimate == 2


def test_place_multi_unit_rank_least_loaded():
    ws = make_workers(1, per_rank=2)
    owners = {("c", i): 0 for i in range(4)}
    a = place(_tasks(owners), ws, owners.__getitem__, rebalance=False)
    assert sorted(a.values()) == [0, 0, 1, 1]


def test_place_then_rebalance_eight_unit_tasks():
    ws = make_workers(2)
    owners = {("c", i): 0 for i in range(8)}
    place(_tasks(owners), ws, owners.__getitem__, rebalance=True)
    loads = [w.load_estimate for w in ws]
    assert max(loads) - min(loads) <= 1.0


def test_rebalance_examples():
    ws = make_workers(4)
    for w in ws:
        w.load_estimate = 1.0
    a = Assignment({0: 0})
    assert maybe_rebalance(a, ws, 0.1) == a
    ws = make_workers(2)
    tasks = _tasks(range(8))
    a = Assignment({t.task_id: 0 for t in tasks})
    ws[0].load_estimate = 8.0
    out = maybe_rebalance(a, ws, 0.5, tasks=tasks)
    assert [w.load_estimate for w in ws] == [4.0, 4.0]
    assert sorted(out.values()).count(1) == 4
    single = make_workers(1)
    single[0].load_estimate = 3
    assert maybe_rebalance(a, single, 0.0) == a


def test_rebalance_leaves_started_tasks():
    ws = make_workers(2)
    tasks = _tasks(range(4))
    for t in tasks:
        t.state = "running"
    ws[0].load_estimate = 4.0
    a = Assignment({t.task_id: 0 for t in tasks})
    assert maybe_rebalance(a, ws, 0.0, tasks=tasks) == a


def _queued(task_id, nbytes):
    t = TaskRecord(task_id, "generic", nbytes=nbytes)
    t.state = "queued"
    return t


def test_try_steal_examples():
    p = CommCostParams(latency=1e-3, bandwidth=1e9, steal_overhead=5e-4)
    thief = WorkerState(0)
    thief.idle_estimate = 10e-3
    assert try_steal(thief, [WorkerState(1), WorkerState(2)], p) is None
    v = WorkerState(1, load_estimate=5)
    v.local_queue.extend([_queued(1, 10), _queued(2, 2 * 10**6)])
    got = try_steal(thief, [v], p)
    assert got.task_id == 2 and [t.task_id for t in v.local_queue] == [1]
    thief.idle_estimate = steal_cost(p, 10)
    assert try_steal(thief, [v], p) is None and len(v.local_queue) == 1


def test_try_steal_prefers_most_loaded():
    p = CommCostParams()
    thief = WorkerState(0)
    light, heavy = WorkerState(1, load_estimate=1), WorkerState(2, load_estimate=9)
    light.local_queue.append(_queued(1, 0))
    heavy.local_queue.append(_queued(2, 0))
    assert try_steal(thief, [light, heavy], p).task_id == 2


def _equal_run(stealing, workers=6, per=4, **kw):
    ws = make_workers(workers)
    s = TaskScheduler(ws, rebalance=False)
    tasks = []
    for w in range(workers):
        for j in range(per):
            key = (w, j)
            s.register_chunk(key, w)
            tasks.append(TaskRecord(len(tasks), "generic", writes=[key], affinity_chunk=key,
                                    cost_estimate=1.0, payload=lambda: None))
    s.spawn(tasks)
    return s.run(stealing=stealing, timing="estimate", **kw)


def test_balanced_24_tasks_on_6_workers():
    rep = _equal_run(False)
    assert rep.executed_count == [4] * 6 and rep.avg_tasks == 4.0
    assert rep.imbalance == 0.0 and rep.wall_time == 4.0


def test_empty_task_set():
    rep = TaskScheduler(make_workers(3)).run()
    assert rep.total_tasks == 0 and rep.wall_time == 0 and rep.busy_time == [0, 0, 0]


def test_deadlock_detected():
    s = TaskScheduler(make_workers(1))
    s.register_chunk("k", 0)
    s.spawn([TaskRecord(0, "generic", writes=["k"], payload=lambda: None)])
    s.tracker._blocking[0] = 1  # corrupt: nothing will ever release it
    s.tracker.ready.clear()
    with pytest.raises(DeadlockError):
        s.run()


def test_skewed_estimates_steal_and_balance():
    ws = make_workers(2)
    s = TaskScheduler(ws, rebalance=False, log=EventLog())
    tasks = []
    for j in range(8):
        s.register_chunk(j, 0)
        tasks.append(TaskRecord(j, "generic", writes=[j], affinity_chunk=j, cost_estimate=1.0,
                                payload=lambda: None))
    s.spawn(tasks)
    off = TaskScheduler(make_workers(2), rebalance=False)
    rep = s.run(stealing=True, timing="estimate")
    assert rep.steal_count > 0
    assert max(rep.busy_time) - min(rep.busy_time) <= 1.0 + 2 * steal_cost(CommCostParams(), 0)
    for st_ev in s.log.select("steal"):
        assert st_ev["i_q"] > st_ev["tau_s"]
    del off


def test_generator_payloads_interleave():
    order = []
    s = TaskScheduler(make_workers(1))
    s.register_chunk("a", 0)
    s.register_chunk("b", 0)
    flag = {"set": False}

    def waiter():
        while not flag["set"]:
            yield False
        order.append("waiter")

    def setter():
        flag["set"] = True
        order.append("setter")

    s.spawn([TaskRecord(0, "generic", writes=["a"], payload=waiter),
             TaskRecord(1, "generic", writes=["b"], payload=setter)])
    rep = s.run()
    assert order == ["setter", "waiter"] and rep.total_tasks == 2


def test_deterministic_without_stealing():
    def go():
        log = EventLog(clock=lambda: 0.0)
        ws = make_workers(3, 2)
        s = TaskScheduler(ws, log=log)
        tasks = []
        for i in range(30):
            key = i % 7
            if key not in s.tracker.chunks:
                s.register_chunk(key, key % 3)
            tasks.append(TaskRecord(i, "generic", writes=[key], affinity_chunk=key,
                                    cost_estimate=1 + i % 4, payload=lambda: None))
        a = s.spawn(tasks)
        s.run(timing="estimate")
        return dict(a), [(r["event"], r["task"], r["worker"]) for r in log]
    assert go() == go()


def _random_dag(seed, n_tasks=40, n_keys=8):
    rnd = random.Random(seed)
    tasks = []
    for i in range(n_tasks):
        keys = rnd.sample(range(n_keys), rnd.randint(1, 3))
        nw = rnd.randint(0, len(keys))
        writes, reads = keys[:nw] or keys[:1], keys[nw:] if nw else keys[1:]
        tasks.append(TaskRecord(i, "generic", reads=reads, writes=writes, affinity_chunk=writes[0],
                                cost_estimate=rnd.random(), payload=lambda: None))
    return tasks


@settings(max_examples=60)
@given(st.integers(0, 10**6), st.booleans(), st.sampled_from(["simulated", "threaded"]))
def test_random_dags_exactly_once_and_ordered(seed, stealing, executor):
    log = EventLog()
    ws = make_workers(3, 2)
    s = TaskScheduler(ws, log=log)
    for k in range(8):
        s.register_chunk(k, k % 3)
    tasks = _random_dag(seed)
    s.spawn(tasks)
    rnd = np.random.default_rng(seed)
    jitter = (lambda t: float(rnd.exponential(1.0))) if executor == "simulated" else None
    rep = s.run(stealing=stealing, executor=executor, timing="estimate", jitter=jitter)
    assert rep.total_tasks == len(tasks)
    assert validate_event_log(list(log), s.tracker.tasks, s.tracker.order) == []


def test_validator_catches_violation():
    t0 = TaskRecord(0, "generic", writes=[1])
    t1 = TaskRecord(1, "generic", reads=[1])
    recs = [{"event": "start", "task": 1}, {"event": "start", "task": 0},
            {"event": "complete", "task": 0}, {"event": "complete", "task": 1}]
    assert validate_event_log(recs, {0: t0, 1: t1}, [0, 1])
    recs2 = [{"event": "start", "task": 0}, {"event": "complete", "task": 0}]
    assert validate_event_log(recs2, {0: t0, 1: t1}, [0, 1])


def test_run_to_completion_wrapper():
    s = TaskScheduler(make_workers(2))
    s.register_chunk(0, 0)
    s.spawn([TaskRecord(0, "generic", writes=[0], payload=lambda: None)])
    assert run_to_completion(s).total_tasks == 1


def _place_time(n):
    ws = make_workers(16, 4)
    owners = {i: i % 16 for i in range(n)}
    tasks = [TaskRecord(i, "generic", writes=[i], affinity_chunk=i, cost_estimate=1.0 + (i % 5))
             for i in range(n)]
    t0 = time.perf_counter()
    place(tasks, ws, owners.__getitem__)
    return time.perf_counter() - t0


def test_place_scales_linearly():
    meds = [statistics.median(_place_time(n) for _ in range(5)) for n in (1000, 2000, 4000)]
    assert meds[1] / meds[0] <= 2.5 and meds[2] / meds[1] <= 2.5
