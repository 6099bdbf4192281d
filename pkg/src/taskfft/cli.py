"""``taskfft`` command line: check, bench, imbalance, trace, breakdown.

Options may also come from a flat ``key=value`` file given with
``--config``; flags on the command line win over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import socket
import subprocess
import sys
import tempfile
from dataclasses import replace

import numpy as np

from .bench import (
    CSV_COLUMNS,
    ImbalanceConfig,
    OracleGuardError,
    RunConfig,
    bench_rows,
    calibrate_params,
    imbalance_report,
    run_breakdown,
    run_check,
    run_trace,
)
from .cost import CommCostParams
from .grid import DecompositionInfeasibleError, InvalidGridError
from .transport import TcpEndpoint, UnsupportedOperationError, load_hosts

COMMANDS = ("check", "bench", "imbalance", "trace", "breakdown")
TCP_COMMANDS = ("check", "bench")
_FLAGS_TRUE = {"1", "true", "yes", "on"}


def _grid(text: str) -> tuple[int, int, int]:
    parts = [p for p in text.replace("x", ",").split(",") if p]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("grid must be NX,NY,NZ")
    return tuple(int(p) for p in parts)


def _onoff(text: str) -> bool:
    if text.lower() not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text.lower() == "on"


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p)


def build_parser() -> argparse.ArgumentParser:
    d = CommCostParams()
    p = argparse.ArgumentParser(prog="taskfft", description="Task-parallel distributed 3D FFT harness.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key=value file mirroring these flags")
    p.add_argument("--grid", type=_grid, default=(8, 8, 8))
    p.add_argument("--strategy", choices=("slab", "pencil", "both"), default="pencil")
    p.add_argument("--ranks", type=int, default=1)
    p.add_argument("--workers-per-rank", type=int, default=1)
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")
    p.add_argument("--mode", choices=("task", "barrier", "both"), default="task")
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--stealing", type=_onoff, default=False, metavar="on|off")
    p.add_argument("--backend", choices=("in_process", "tcp"), default="in_process")
    p.add_argument("--hosts", help="host:port per line, line i is rank i (tcp)")
    p.add_argument("--rank", type=int, help="run as this single tcp rank (set by the launcher)")
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--beta", type=float, default=d.beta)
    p.add_argument("--latency", type=float, default=d.latency)
    p.add_argument("--bandwidth", type=float, default=d.bandwidth)
    p.add_argument("--steal-overhead", type=float, default=d.steal_overhead)
    p.add_argument("--tasks-per-chunk", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", choices=("csv", "json"), default="csv")
    p.add_argument("--out", help="write the report (or trace) here instead of stdout")
    p.add_argument("--calibrate", action="store_true", help="measure alpha/beta before running")
    p.add_argument("--force-oracle", action="store_true", help="lift the naive-oracle size guard")
    p.add_argument("--delays-ms", type=_floats, default=(0.0, 50.0),
                   help="trace: per-channel delays, cycled over sending channels")
    p.add_argument("--heavy-workers", type=int, default=2, help="imbalance: workers with heavy chunks")
    p.add_argument("--heavy-factor", type=int, default=4, help="imbalance: heavy/light chunk volume")
    p.add_argument("--timing", choices=("measured", "estimate"), default="measured",
                   help="task durations: measured, or cost-model estimates for determinism")
    p.add_argument("--dump", help="check: save the gathered forward spectrum (.npy)")
    return p


def read_config(path: str) -> list[str]:
    """Turn a key=value file into argv tokens."""
    store_true = {"calibrate", "force_oracle"}
    argv = []
    with open(path) as fp:
        for n, line in enumerate(fp, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key in ("command", "config"):
                continue
            if key in store_true:
                if value.lower() in _FLAGS_TRUE:
                    argv.append("--" + key.replace("_", "-"))
                continue
            argv += ["--" + key.replace("_", "-"), value]
    return argv


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        cmd = [a for a in argv if a in COMMANDS][:1]
        rest = [a for a in argv if a not in cmd]
        argv = cmd + read_config(known.config) + rest
    return parser.parse_args(argv)


def to_config(ns: argparse.Namespace) -> RunConfig:
    params = CommCostParams(ns.alpha, ns.beta, ns.latency, ns.bandwidth, ns.steal_overhead)
    return RunConfig(grid=ns.grid, strategy=ns.strategy, ranks=ns.ranks,
                     workers_per_rank=ns.workers_per_rank, precision=ns.precision, mode=ns.mode,
                     iters=ns.iters, stealing=ns.stealing, backend=ns.backend, hosts=ns.hosts,
                     rank=ns.rank, params=params, tasks_per_chunk=ns.tasks_per_chunk, seed=ns.seed,
                     output=ns.output, out=ns.out, calibrate=ns.calibrate,
                     force_oracle=ns.force_oracle, delays_ms=ns.delays_ms,
                     heavy_factor=ns.heavy_factor, timing=ns.timing)


def write_csv(rows, fp) -> None:
    w = csv.DictWriter(fp, fieldnames=CSV_COLUMNS, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n",
                       extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)


def _emit(ns, payload: dict, rows=None) -> None:
    """JSON object, or CSV of ``rows`` (falls back to key,value pairs)."""
    fp = open(ns.out, "w", newline="") if ns.out else sys.stdout
    try:
        if ns.output == "json":
            json.dump(payload, fp, indent=2)
            fp.write("\n")
        elif rows is not None:
            write_csv(rows, fp)
        else:
            w = csv.writer(fp, lineterminator="\r\n")
            w.writerow(["key", "value"])
            for k, v in _flatten(payload):
                w.writerow([k, v])
    finally:
        if ns.out:
            fp.close()


def _flatten(d, prefix=""):
    for k, v in d.items():
        if isinstance(v, dict):
            yield from _flatten(v, f"{prefix}{k}.")
        else:
            yield f"{prefix}{k}", v


def cmd_check(cfg: RunConfig, ns) -> int:
    results = run_check(cfg)
    if not results:  # non-root tcp rank
        return 0
    ok = all(r.passed for r in results)
    if ns.dump:
        np.save(ns.dump, results[0].spectrum)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.strategy} grid={cfg.grid} ranks={cfg.ranks} "
              f"precision={cfg.precision} forward_err={r.forward_err:.3e} "
              f"inverse_err={r.inverse_err:.3e} roundtrip_err={r.roundtrip_err:.3e} "
              f"tol={r.tol:.3e} seed={cfg.seed}", file=sys.stderr if ns.out else sys.stdout)
    if ns.out or ns.output == "json":
        _emit(ns, {"command": "check", "seed": cfg.seed, "passed": ok,
                   "results": [dict(strategy=r.strategy, forward_err=r.forward_err,
                                    inverse_err=r.inverse_err, roundtrip_err=r.roundtrip_err,
                                    tol=r.tol, passed=r.passed) for r in results]})
    return 0 if ok else 1


def cmd_bench(cfg: RunConfig, ns) -> int:
    rows = bench_rows(cfg)
    if cfg.endpoint is not None and cfg.endpoint.rank != 0:
        return 0
    print(f"# seed={cfg.seed}", file=sys.stderr)
    _emit(ns, {"command": "bench", "seed": cfg.seed, "rows": rows}, rows)
    return 0


def cmd_imbalance(cfg: RunConfig, ns) -> int:
    icfg = ImbalanceConfig(workers=cfg.ranks * cfg.workers_per_rank, heavy_workers=ns.heavy_workers,
                           heavy_factor=cfg.heavy_factor, precision=cfg.precision,
                           timing=cfg.timing, params=cfg.params, seed=cfg.seed)
    rep = imbalance_report(icfg)
    out = sys.stderr if ns.out or ns.output == "json" else sys.stdout
    print(f"{'stealing':<9}{'total_s':>10}{'imbal_%':>9}{'max_busy':>10}{'min_busy':>10}"
          f"{'avg_tasks':>10}{'steals':>7}   seed={cfg.seed}", file=out)
    for label in ("off", "on"):
        s = rep[label]
        print(f"{label:<9}{s['total_time_s']:>10.4f}{s['imbalance_pct']:>9.1f}{s['max_busy_s']:>10.4f}"
              f"{s['min_busy_s']:>10.4f}{s['avg_tasks_per_worker']:>10.1f}{s['steal_count']:>7}", file=out)
    if ns.out or ns.output == "json":
        _emit(ns, {"command": "imbalance", "seed": cfg.seed, "workers": icfg.workers,
                   "heavy_workers": icfg.heavy_workers, "heavy_factor": icfg.heavy_factor,
                   "stealing_off": rep["off"], "stealing_on": rep["on"]})
    return 0


def cmd_trace(cfg: RunConfig, ns) -> int:
    res = run_trace(cfg)
    if ns.out:
        with open(ns.out, "w") as fp:
            for r in res.records:
                fp.write(json.dumps(r) + "\n")
        report = sys.stdout
    else:
        for r in res.records:
            sys.stdout.write(json.dumps(r) + "\n")
        report = sys.stderr
    s = res.summary()
    print(f"overlap {s['verdict']}: recv_posts_before_sends={s['recv_posts_before_sends']} "
          f"events={s['events']} delays_ms={list(cfg.delays_ms)} seed={cfg.seed}", file=report)
    return 0 if res.verdict else 1


def cmd_breakdown(cfg: RunConfig, ns) -> int:
    rep = run_breakdown(cfg)
    d = rep.as_dict()
    out = sys.stderr if ns.out or ns.output == "json" else sys.stdout
    print(f"fft {d['pct_fft']:.1f}%  redistribution {d['pct_redistribution']:.1f}%  "
          f"overhead {d['pct_overhead']:.1f}%  total {d['total_s']:.4f}s  seed={cfg.seed}", file=out)
    if ns.out or ns.output == "json":
        _emit(ns, {"command": "breakdown", "seed": cfg.seed, "grid": list(cfg.grid), "ranks": cfg.ranks,
                   "tasks_per_chunk": cfg.tasks_per_chunk, **d})
    return 0


HANDLERS = {"check": cmd_check, "bench": cmd_bench, "imbalance": cmd_imbalance,
            "trace": cmd_trace, "breakdown": cmd_breakdown}


def _free_ports(n: int) -> list[int]:
    socks = []
    for _ in range(n):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        socks.append(s)
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def launch_local(argv: list[str], ns) -> int:
    """Start one subprocess per rank on localhost and relay rank 0's output."""
    tmp = None
    hosts = ns.hosts
    if hosts is None:
        fd, tmp = tempfile.mkstemp(suffix=".hosts", text=True)
        with os.fdopen(fd, "w") as fp:
            for port in _free_ports(ns.ranks):
                fp.write(f"127.0.0.1:{port}\n")
        hosts = tmp
    elif len(load_hosts(hosts)) != ns.ranks:
        raise ValueError(f"{hosts} lists {len(load_hosts(hosts))} hosts for {ns.ranks} ranks")
    try:
        procs = []
        for r in range(ns.ranks):
            cmd = [sys.executable, "-m", "taskfft", *argv, "--hosts", hosts, "--rank", str(r)]
            procs.append(subprocess.Popen(cmd, stdout=None if r == 0 else subprocess.DEVNULL))
        codes = [p.wait() for p in procs]
    finally:
        if tmp:
            os.unlink(tmp)
    return max(codes, key=abs)


def main(argv=None) -> int:
    raw = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = parse_args(raw)
        cfg = to_config(ns)
        if ns.calibrate:
            cfg = replace(cfg, params=calibrate_params(cfg.params))
            print(f"# calibrated alpha={cfg.params.alpha:.3e} beta={cfg.params.beta:.3e}", file=sys.stderr)
        if ns.backend == "tcp":
            if ns.command not in TCP_COMMANDS:
                raise UnsupportedOperationError(f"{ns.command} is not supported on the tcp backend")
            if ns.rank is None:
                return launch_local(raw, ns)
            if ns.hosts is None:
                raise ValueError("--rank needs --hosts")
            cfg.endpoint = TcpEndpoint(ns.rank, load_hosts(ns.hosts))
        try:
            return HANDLERS[ns.command](cfg, ns)
        finally:
            if cfg.endpoint is not None:
                cfg.endpoint.close()
    except OracleGuardError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 2
    except (ValueError, DecompositionInfeasibleError, InvalidGridError, UnsupportedOperationError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
