"""Synthetic-imbalance experiment with stealing off and on, repeated over seeds.

Also sweeps the heavy-chunk factor to show where stealing starts to matter.
"""

import argparse

import numpy as np

from taskfft.bench import ImbalanceConfig, imbalance_report


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--workers", type=int, default=6)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--factors", type=int, nargs="+", default=[1, 2, 4, 8])
    args = ap.parse_args()

    print(f"{'factor':>6} {'off_imb%':>9} {'on_imb%':>9} {'off_s':>9} {'on_s':>9} {'steals':>7}")
    for f in args.factors:
        reps = [imbalance_report(ImbalanceConfig(workers=args.workers, heavy_factor=f, seed=s))
                for s in range(args.repeats)]
        col = lambda mode, key: float(np.median([r[mode][key] for r in reps]))
        print(f"{f:>6} {col('off', 'imbalance_pct'):>9.1f} {col('on', 'imbalance_pct'):>9.1f} "
              f"{col('off', 'total_time_s'):>9.4f} {col('on', 'total_time_s'):>9.4f} "
              f"{col('on', 'steal_count'):>7.0f}")
    print(f"(medians over {args.repeats} seeds, {args.workers} workers, 4 tasks each)")


if __name__ == "__main__":
    main()
