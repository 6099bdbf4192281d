"""Desk-scale experiments behind the CLI: oracle check, timing rows,
synthetic imbalance, overlap trace and the time breakdown."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cost import CommCostParams, ComputeModel
from .events import EventLog
from .grid import DistributedArray, GridSpec, default_process_grid, make_decomposition
from .kernel import FORWARD, INVERSE, PlanCache, PlanKey, apply_fft_1d, naive_dft_3d
from .pipeline import (
    create_context,
    fft3d_inverse,
    forward,
    gather_to_root,
    inverse,
    phase_id,
    random_field,
    scatter,
    warm_up,
)
from .redistribution import make_workspace, redistribute_all
from .scheduler import TaskRecord, TaskScheduler, make_workers
from .transport import InProcessFabric, UnsupportedOperationError, measure_alpha_beta

ORACLE_GUARD = 1 << 16
CSV_COLUMNS = ("grid", "strategy", "ranks", "workers", "precision", "mode",
               "iter_mean_s", "iter_std_s", "t_fft_s", "t_redist_s", "t_overhead_s")


class OracleGuardError(ValueError):
    pass


def tolerance(grid: GridSpec, x_inf: float) -> float:
    """Max-abs error bound for a whole 3D transform."""
    eps = 1e-10 if grid.precision == "f64" else 1e-4
    return eps * grid.size * x_inf


@dataclass
class RunConfig:
    grid: tuple = (8, 8, 8)
    strategy: str = "pencil"
    ranks: int = 1
    workers_per_rank: int = 1
    precision: str = "f64"
    mode: str = "task"
    iters: int = 3
    stealing: bool = False
    backend: str = "in_process"
    hosts: str | None = None
    rank: int | None = None
    params: CommCostParams = field(default_factory=CommCostParams)
    tasks_per_chunk: int = 1
    seed: int = 0
    output: str = "csv"
    out: str | None = None
    calibrate: bool = False
    force_oracle: bool = False
    delays_ms: tuple = (0.0, 50.0)
    heavy_factor: int = 4
    timing: str = "measured"
    endpoint: object = field(default=None, repr=False, compare=False)  # tcp rank endpoint

    @property
    def gridspec(self) -> GridSpec:
        return GridSpec(*self.grid, precision=self.precision)

    @property
    def strategies(self) -> tuple[str, ...]:
        return ("slab", "pencil") if self.strategy == "both" else (self.strategy,)

    @property
    def modes(self) -> tuple[str, ...]:
        return ("task_async", "barrier_sync") if self.mode == "both" else (
            {"task": "task_async", "barrier": "barrier_sync"}.get(self.mode, self.mode),)

    def validate(self) -> None:
        g = self.gridspec
        for s in self.strategies:
            make_decomposition(g, s, default_process_grid(g, s, self.ranks))
        if self.iters < 1:
            raise ValueError("iters must be >= 1")

    def context(self, strategy: str, mode: str, **kw):
        if self.endpoint is not None:
            kw.setdefault("endpoints", {self.endpoint.rank: self.endpoint})
        return create_context(self.gridspec, strategy, self.ranks, mode=mode,
                              workers_per_rank=self.workers_per_rank, params=self.params,
                              tasks_per_chunk=self.tasks_per_chunk, stealing=self.stealing,
                              timing=self.timing, **kw)


# -- check ------------------------------------------------------------------

@dataclass
class CheckResult:
    strategy: str
    forward_err: float
    inverse_err: float
    roundtrip_err: float
    tol: float
    spectrum: np.ndarray | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return max(self.forward_err, self.inverse_err, self.roundtrip_err) <= self.tol


def run_check(cfg: RunConfig, ctx_factory=None) -> list[CheckResult]:
    g = cfg.gridspec
    if g.size > ORACLE_GUARD and not cfg.force_oracle:
        raise OracleGuardError(
            f"{g.size} elements exceed the naive-oracle guard of {ORACLE_GUARD}; pass --force-oracle")
    x = random_field(g, cfg.seed)
    ref = naive_dft_3d(x, FORWARD)
    ref_inv = naive_dft_3d(ref, INVERSE)
    tol = tolerance(g, float(np.abs(x).max()))
    out = []
    for s in cfg.strategies:
        ctx = ctx_factory(s) if ctx_factory else cfg.context(s, cfg.modes[0])
        X, _ = forward(ctx, x)
        fft3d_inverse(ctx)  # C -> A in place: the roundtrip
        rt = gather_to_root(ctx, ctx.A)
        y, _ = inverse(ctx, ref.astype(g.dtype))
        if X is None:  # non-root tcp rank
            continue
        out.append(CheckResult(s, float(np.abs(X - ref).max()), float(np.abs(y - ref_inv).max()),
                               float(np.abs(rt - x).max()), tol, X))
    return out


# -- bench ------------------------------------------------------------------

def bench_row(cfg: RunConfig, strategy: str, mode: str, ctx=None) -> dict:
    ctx = ctx or cfg.context(strategy, mode)
    x = random_field(cfg.gridspec, cfg.seed)
    warm_up(ctx, x)
    reps = [forward(ctx, x)[1] for _ in range(cfg.iters)]
    totals = np.array([r.total_s for r in reps])
    return {
        "grid": "x".join(str(n) for n in cfg.grid),
        "strategy": strategy,
        "ranks": cfg.ranks,
        "workers": cfg.workers_per_rank,
        "precision": cfg.precision,
        "mode": mode,
        "iter_mean_s": float(totals.mean()),
        "iter_std_s": float(totals.std()),
        "t_fft_s": float(np.mean([r.t_fft_s for r in reps])),
        "t_redist_s": float(np.mean([r.t_redist_s for r in reps])),
        "t_overhead_s": float(np.mean([r.t_overhead_s for r in reps])),
    }


def bench_rows(cfg: RunConfig) -> list[dict]:
    cfg.validate()
    return [bench_row(cfg, s, m) for s in cfg.strategies for m in cfg.modes]


# -- imbalance --------------------------------------------------------------

@dataclass
class ImbalanceConfig:
    workers: int = 6
    tasks_per_worker: int = 4
    heavy_workers: int = 2
    heavy_factor: int = 4
    extent: tuple = (64, 16, 8)
    precision: str = "f64"
    timing: str = "measured"
    params: CommCostParams = field(default_factory=CommCostParams)
    seed: int = 0

    def __post_init__(self):
        if self.workers < 2:
            raise ValueError("the imbalance experiment needs at least 2 workers")
        if not 0 <= self.heavy_workers <= self.workers:
            raise ValueError("heavy_workers must lie in [0, workers]")
        if self.heavy_factor < 1:
            raise ValueError("heavy_factor must be >= 1")


def imbalance_run(cfg: ImbalanceConfig, stealing: bool, log: EventLog | None = None):
    """One pass of the synthetic workload: every worker is its own rank and owns
    ``tasks_per_worker`` chunks; the first ``heavy_workers`` get chunks
    ``heavy_factor`` times larger.  Placement rebalance is off so the skew survives
    until run time."""
    dtype = GridSpec(1, 1, 1, cfg.precision).dtype
    rng = np.random.default_rng(cfg.seed)
    cache = PlanCache()
    model = ComputeModel()
    workers = make_workers(cfg.workers, 1)
    sched = TaskScheduler(workers, cfg.params, log=log, rebalance=False)
    light = tuple(cfg.extent)
    heavy = (light[0], light[1], light[2] * cfg.heavy_factor)
    for ext in {light, heavy}:  # warm plans and caches outside the timed run
        buf = np.zeros(int(np.prod(ext)), dtype=dtype)
        apply_fft_1d(cache.get_or_create_plan(PlanKey.for_chunk(dtype, ext, (0,))), buf, ext, 0)
    tasks = []
    for w in range(cfg.workers):
        ext = heavy if w < cfg.heavy_workers else light
        for j in range(cfg.tasks_per_worker):
            key = ("chunk", w, j)
            n = int(np.prod(ext))
            buf = (rng.standard_normal(n) + 1j * rng.standard_normal(n)).astype(dtype)
            sched.register_chunk(key, w, buf.nbytes)

            def run(buf=buf, ext=ext):
                plan = cache.get_or_create_plan(PlanKey.for_chunk(dtype, ext, (0,)))
                apply_fft_1d(plan, buf, ext, 0)
            tasks.append(TaskRecord(len(tasks), "fft_1d", reads=[key], writes=[key], affinity_chunk=key,
                                    cost_estimate=model.estimate(ext[0], n // ext[0]), payload=run,
                                    in_place=True, name=f"w{w}.{j}"))
    sched.spawn(tasks)
    return sched.run(stealing=stealing, executor="simulated", timing=cfg.timing)


def imbalance_report(cfg: ImbalanceConfig) -> dict:
    imbalance_run(cfg, False)  # untimed warm-up pass
    out = {}
    for label, stealing in (("off", False), ("on", True)):
        out[label] = imbalance_run(cfg, stealing).summary()
    return out


# -- trace ------------------------------------------------------------------

@dataclass
class TraceResult:
    records: list
    verdict: bool
    post_before_send: bool
    delays: dict

    def summary(self) -> dict:
        return {"verdict": "PASS" if self.verdict else "FAIL",
                "recv_posts_before_sends": self.post_before_send,
                "events": len(self.records)}


def overlap_verdict(records) -> bool:
    """Some unpack_complete precedes the globally last send_complete."""
    sends = [r["t"] for r in records if r["event"] == "send_complete"]
    unpacks = [r["t"] for r in records if r["event"] == "unpack_complete"]
    return bool(sends and unpacks and min(unpacks) < max(sends))


def posts_precede_sends(records) -> bool:
    """Per rank, the last recv_post comes before the first send_start."""
    by_rank = {}
    for i, r in enumerate(records):
        by_rank.setdefault(r["rank"], []).append((i, r["event"]))
    for evs in by_rank.values():
        posts = [i for i, e in evs if e == "recv_post"]
        sends = [i for i, e in evs if e == "send_start"]
        if posts and sends and max(posts) > min(sends):
            return False
    return True


def run_trace(cfg: RunConfig, log: EventLog | None = None) -> TraceResult:
    """One redistribution with per-channel delays cycled from ``cfg.delays_ms``."""
    if cfg.backend != "in_process":
        raise UnsupportedOperationError("trace needs the in_process backend for delay injection")
    g = cfg.gridspec
    strategy = cfg.strategies[0]
    plan = make_decomposition(g, strategy, default_process_grid(g, strategy, cfg.ranks))
    src_i, dst_i = (0, 2) if strategy == "slab" else (0, 1)
    src = DistributedArray.zeros(g, plan.layouts[src_i], "A")
    dst = DistributedArray.zeros(g, plan.layouts[dst_i], "B")
    scatter(random_field(g, cfg.seed), src)
    fabric = InProcessFabric(plan.nranks)
    wss = {r: make_workspace(src.layout, dst.layout, r, g.dtype) for r in range(plan.nranks)}
    delays = {}
    i = 0
    for r in range(plan.nranks):
        for peer in wss[r].plan.send_ranks:
            d = cfg.delays_ms[i % len(cfg.delays_ms)] / 1e3
            fabric.set_delay(r, peer, None, d)
            delays[(r, peer)] = d
            i += 1
    log = log if log is not None else EventLog()
    redistribute_all(src, dst, wss, {r: fabric.endpoint(r) for r in range(plan.nranks)},
                     phase_id=phase_id(src_i, dst_i), log=log, poll_sleep=1e-4)
    recs = list(log)
    return TraceResult(recs, overlap_verdict(recs), posts_precede_sends(recs), delays)


# -- breakdown --------------------------------------------------------------

@dataclass
class BreakdownReport:
    t_fft_s: float
    t_redist_s: float
    t_overhead_s: float

    @property
    def total_s(self) -> float:
        return self.t_fft_s + self.t_redist_s + self.t_overhead_s

    def _pct(self, v: float) -> float:
        return 100.0 * v / self.total_s if self.total_s > 0 else 0.0

    @property
    def pct_fft(self) -> float:
        return self._pct(self.t_fft_s)

    @property
    def pct_redistribution(self) -> float:
        return self._pct(self.t_redist_s)

    @property
    def pct_overhead(self) -> float:
        return self._pct(self.t_overhead_s)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(total_s=self.total_s, pct_fft=self.pct_fft,
                 pct_redistribution=self.pct_redistribution, pct_overhead=self.pct_overhead)
        return d


def run_breakdown(cfg: RunConfig) -> BreakdownReport:
    """Accumulate FFT task time, redistribution time and the residual over timed iterations."""
    cfg.validate()
    ctx = cfg.context(cfg.strategies[0], "task_async")
    x = random_field(cfg.gridspec, cfg.seed)
    warm_up(ctx, x)
    fft = redist = over = 0.0
    for _ in range(cfg.iters):
        _, rep = forward(ctx, x)
        fft += rep.t_fft_s
        redist += rep.t_redist_s
        over += rep.t_overhead_s
    return BreakdownReport(fft, redist, over)


def calibrate_params(params: CommCostParams) -> CommCostParams:
    """Replace alpha/beta/latency/bandwidth with ping-pong measurements on the in-process fabric."""
    fab = InProcessFabric(2)
    alpha, beta = measure_alpha_beta(fab.endpoint(0), fab.endpoint(1))
    beta = max(beta, 1e-15)
    return replace(params, alpha=alpha, beta=beta, latency=alpha, bandwidth=1.0 / beta)


def schema_path(name: str) -> str:
    """Path of a published JSON schema: bench, trace_event, breakdown, imbalance or check."""
    from importlib import resources
    return str(resources.files("taskfft") / "schemas" / f"{name}.schema.json")
