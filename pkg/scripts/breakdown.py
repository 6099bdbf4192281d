"""FFT / redistribution / overhead shares from large to tiny per-rank work."""

import argparse

from taskfft.bench import RunConfig, run_breakdown

CONFIGS = [
    ((64, 64, 64), 2, 1),
    ((32, 32, 32), 4, 1),
    ((16, 16, 16), 4, 2),
    ((16, 16, 16), 8, 4),
    ((8, 8, 8), 8, 8),
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=3)
    args = ap.parse_args()
    print(f"{'grid':>10} {'ranks':>5} {'K':>3} {'elems/rank':>10} {'fft%':>6} {'redist%':>8} {'overhead%':>10}")
    for grid, ranks, k in CONFIGS:
        rep = run_breakdown(RunConfig(grid=grid, ranks=ranks, tasks_per_chunk=k, iters=args.iters))
        per_rank = grid[0] * grid[1] * grid[2] // ranks
        print(f"{'x'.join(map(str, grid)):>10} {ranks:>5} {k:>3} {per_rank:>10} {rep.pct_fft:>6.1f} "
              f"{rep.pct_redistribution:>8.1f} {rep.pct_overhead:>10.1f}")


if __name__ == "__main__":
    main()
