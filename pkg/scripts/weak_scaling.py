"""Weak-scaling k-means: fixed rows per worker, growing worker count."""

import argparse
import json
import os

from tupleflow.bench import weak_scaling
from tupleflow.engine import Engine


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workers", default="1,2,4")
    ap.add_argument("--rows-per-worker", type=int, default=1_000_000)
    ap.add_argument("--iters", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--out", default="results/scaling.json")
    args = ap.parse_args()
    workers = [int(w) for w in args.workers.split(",")]
    if max(workers) > (os.cpu_count() or 1):
        print(f"warning: {max(workers)} workers on {os.cpu_count()} cores; timings will not be flat")
    points = weak_scaling(workers, args.rows_per_worker, Engine(backend="numba"),
                          iters=args.iters, repeats=args.repeats)
    times = [p.timing.median_ms for p in points]
    for p in points:
        print(f"{p.workers} workers  {p.rows:>10} rows  {p.timing.median_ms:9.1f} ms")
    print(f"max/min ratio {max(times) / min(times):.2f}")
    with open(args.out, "w") as f:
        json.dump([p.to_dict() for p in points], f, indent=2)


if __name__ == "__main__":
    main()
