"""Static statistics for the four k-means UDFs under the default hardware profile."""

import argparse
import json

from tupleflow.analyzer import HardwareProfile, analyze, format_report, report_rows
from tupleflow.workloads import kmeans_udfs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--attr", type=int, default=2)
    ap.add_argument("--cent", type=int, default=3)
    ap.add_argument("--out", help="optional JSON output path")
    args = ap.parse_args()
    udfs = kmeans_udfs(args.attr, args.cent)
    stats = [analyze(udfs[n], HardwareProfile()) for n in ("distance", "minimum", "reassign", "recompute")]
    print(format_report(stats))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report_rows(stats), f, indent=2)


if __name__ == "__main__":
    main()
