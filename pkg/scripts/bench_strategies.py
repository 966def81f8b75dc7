"""Time pipeline, operator, tiled and adaptive on k-means over a range of input sizes."""

import argparse
import json
import logging

from tupleflow.analyzer import HardwareProfile
from tupleflow.bench import bench_strategies
from tupleflow.engine import Engine
from tupleflow.workloads import WORKLOADS

MB = 1 << 20


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes-mb", default="10,35,70", help="comma separated input sizes")
    ap.add_argument("--iters", type=int, default=20)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--out", default="results/strategies.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    spec = WORKLOADS["kmeans"]
    engine = Engine(backend="numba", hw=HardwareProfile(worker_threads=args.threads))
    rows_out = []
    for mb in (float(s) for s in args.sizes_mb.split(",")):
        rows = int(mb * MB) // 8  # two f32 attributes per point
        wf = spec.workflow(spec.dataset(rows=rows), iters=args.iters)
        timings = bench_strategies(wf, engine, repeats=args.repeats)
        point = {"size_mb": mb, "rows": rows, **{t.label: t.median_ms for t in timings}}
        print(point)
        rows_out.append(point)
    with open(args.out, "w") as f:
        json.dump(rows_out, f, indent=2)


if __name__ == "__main__":
    main()
