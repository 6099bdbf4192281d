"""Strong-scaling sweep: fixed grid, ranks 1..8, both strategies and both modes.

    python3 scripts/scaling.py --grid 32,32,32 --out scaling.csv
"""

import argparse
import sys

from taskfft.bench import RunConfig, bench_rows
from taskfft.cli import _grid, write_csv
from taskfft.grid import DecompositionInfeasibleError


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grid", type=_grid, default=(32, 32, 32))
    ap.add_argument("--ranks", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--iters", type=int, default=5)
    ap.add_argument("--precision", default="f64")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()

    rows = []
    for r in args.ranks:
        for strategy in ("slab", "pencil"):
            cfg = RunConfig(grid=args.grid, strategy=strategy, ranks=r, mode="both", iters=args.iters,
                            precision=args.precision, seed=args.seed)
            try:
                rows += bench_rows(cfg)
            except DecompositionInfeasibleError as exc:
                print(f"skip {strategy} ranks={r}: {exc}", file=sys.stderr)
    for row in rows:
        if row["mode"] == "barrier_sync":
            task = next(t for t in rows if t["mode"] == "task_async" and t["ranks"] == row["ranks"]
                        and t["strategy"] == row["strategy"])
            print(f"{row['strategy']:>6} ranks={row['ranks']}  barrier/task = "
                  f"{row['iter_mean_s'] / task['iter_mean_s']:.2f}", file=sys.stderr)
    fp = open(args.out, "w", newline="") if args.out else sys.stdout
    write_csv(rows, fp)
    if args.out:
        fp.close()


if __name__ == "__main__":
    main()
