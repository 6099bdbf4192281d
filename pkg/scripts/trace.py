"""Write overlap traces for staggered and equal delays and print both verdicts."""

import argparse
import json
from pathlib import Path

from taskfft.bench import RunConfig, run_trace


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ranks", type=int, default=4)
    ap.add_argument("--outdir", default="traces")
    args = ap.parse_args()
    out = Path(args.outdir)
    out.mkdir(exist_ok=True)
    for label, delays in (("staggered", (0.0, 50.0)), ("equal", (50.0,))):
        res = run_trace(RunConfig(grid=(8, 8, 8), ranks=args.ranks, delays_ms=delays))
        path = out / f"trace_{label}.jsonl"
        path.write_text("".join(json.dumps(r) + "\n" for r in res.records))
        s = res.summary()
        print(f"{label:>9} delays_ms={list(delays)} verdict={s['verdict']} "
              f"posts_before_sends={s['recv_posts_before_sends']} events={s['events']} -> {path}")


if __name__ == "__main__":
    main()
