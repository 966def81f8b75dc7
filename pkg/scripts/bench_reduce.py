"""Reduction-variable and direct-index lowerings against a hash table over a range of sizes."""

import argparse
import json

from tupleflow.bench import bench_lowering
from tupleflow.engine import Engine


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes-mb", default="1,10,100")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--out", default="results/reduce.json")
    args = ap.parse_args()
    engine = Engine(backend="numba")
    out = []
    for mb in (float(s) for s in args.sizes_mb.split(",")):
        for bench in ("reduction-variable", "direct-index"):
            p = bench_lowering(bench, mb, engine, repeats=args.repeats)
            print(f"{bench:<20}{mb:>8.0f} MB  fast {p.fast.median_ms:9.2f} ms  "
                  f"hash {p.hashed.median_ms:9.2f} ms  {p.speedup:6.2f}x")
            out.append(p.to_dict())
    with open(args.out, "w") as f:
        json.dump(out, f, indent=2)


if __name__ == "__main__":
    main()
