"""Command-line harness: run workloads, inspect plans and UDF statistics, run the benchmarks.

Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analyzer import analyze, format_report, report_rows
from .bench import ResultMismatch, bench_lowering, bench_strategies, weak_scaling
from .config import Config, ConfigError, load_config
from .engine import Engine, EvalResult
from .io import write_csv
from .ir import IRSyntaxError, UdfProgram, parse_programs
from .ir.program import ContractViolation
from .report import checksums
from .runtime import ExecutionError, form_units
from .synth import STRATEGIES
from .synth.compiler import BACKENDS
from .workloads import WORKLOADS

logger = logging.getLogger("tupleflow")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# shared option groups

def _global_options(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="TOML hardware profile and topology")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0, help="dataset seed")
    p.add_argument("--json", default=d, metavar="PATH", help="write the JSON report here ('-' for stdout)")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)


def _runtime_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, help="executors per node")
    p.add_argument("--nodes", type=int, help="simulated nodes")
    p.add_argument("--block-bytes", type=int, help="executor block size in bytes")
    p.add_argument("--backend", choices=BACKENDS, help="kernel backend")


def _workload_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("workload", choices=sorted(WORKLOADS))
    p.add_argument("--rows", type=int, help="dataset rows (default: the workload's desk-scale size)")
    p.add_argument("--iters", type=int, help="iterations for iterative workloads")
    p.add_argument("--features", type=int, help="feature count (regressions, naive bayes)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    parser = argparse.ArgumentParser(prog="tupleflow", description=__doc__.splitlines()[0])
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one workload")
    _workload_options(p)
    _runtime_options(p)
    p.add_argument("--strategy", default="adaptive", choices=STRATEGIES)
    p.add_argument("--explain-plan", action="store_true", help="print the stage structure as text and JSON")

    p = sub.add_parser("gen", parents=[common], help="write a workload dataset as CSV")
    _workload_options(p)
    p.add_argument("--out", required=True, help="CSV output path")

    p = sub.add_parser("analyze", parents=[common], help="UDF statistics report for textual IR or a workload")
    p.add_argument("source", help="path to a textual IR file, or a workload name")

    p = sub.add_parser("plan", parents=[common], help="show the abstract and execution plans")
    _workload_options(p)
    p.add_argument("--strategy", default="adaptive", choices=STRATEGIES)
    p.add_argument("--explain", action="store_true", help="also print per-operator statistics")

    p = sub.add_parser("bench-strategies", parents=[common], help="compare the four strategies on one workload")
    _workload_options(p)
    _runtime_options(p)
    p.add_argument("--repeats", type=int, default=5, help="timed runs after one warm-up")

    p = sub.add_parser("bench-reduce", parents=[common], help="reduce lowerings against hash tables")
    _runtime_options(p)
    p.add_argument("--sizes", default="10,100", help="comma separated data sizes in MB")
    p.add_argument("--repeats", type=int, default=5)

    p = sub.add_parser("scale", parents=[common], help="weak-scaling k-means sweep")
    _runtime_options(p)
    p.add_argument("--workers", default="1,2,4", help="comma separated worker counts")
    p.add_argument("--rows-per-worker", type=int, default=1_000_000)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--repeats", type=int, default=5)
    return parser


# helpers

def _ints(text: str, what: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{what} must be comma separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise UsageError(f"{what} must be positive")
    return vals


def _config(args) -> Config:
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(getattr(args, "threads", None), getattr(args, "nodes", None),
                             getattr(args, "block_bytes", None))
    if getattr(args, "backend", None):
        cfg.backend = args.backend
    return cfg


def _engine(cfg: Config) -> Engine:
    return Engine(hw=cfg.profile, topology=cfg.topology(), backend=cfg.backend)


def _overrides(args) -> dict:
    out = {}
    for k in ("iters", "features"):
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _workflow(args):
    spec = WORKLOADS[args.workload]
    over = _overrides(args)
    if args.rows is not None and args.rows < 1:
        raise UsageError("--rows must be positive")
    data = spec.dataset(rows=args.rows, seed=args.seed, **over)
    return spec, data, spec.workflow(data, **over)


def _stage_report(res: EvalResult) -> list[dict]:
    """Plan stages with the timing of the runtime unit that executed each one."""
    plan = res.plan
    timings = {r["stage"]: r for r in res.stats.stages}
    in_loop = {i for s in plan.stages if s.role == "loop" for i in s.body}
    out = []
    for u in form_units(plan):
        names = ", ".join(n for i in u.stages for n in plan.stages[i].names)
        rec = timings.get(f"{u.kind} {{{names}}}", {})
        for i in u.stages:
            s = plan.stages[i]
            out.append({"index": i, "describe": s.describe(), **s.to_dict(), "in_loop": i in in_loop,
                        "unit": rec.get("stage"), "unit_ms": rec.get("ms"), "runs": rec.get("runs")})
    return out


def _report(workload: str, strategy: str, workers: int, wall_ms, stages: list, sums: dict, **extra) -> dict:
    return {"workload": workload, "strategy": strategy, "workers": workers, "wall_ms": wall_ms,
            "stages": stages, "checksums": sums, **extra}


def _emit_json(args, doc) -> None:
    path = getattr(args, "json", None)
    if not path:
        return
    text = json.dumps(doc, indent=2, default=str)
    if path == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")
        logger.info("wrote %s", path)


# subcommands

def cmd_run(args) -> int:
    cfg = _config(args)
    spec, data, wf = _workflow(args)
    engine = _engine(cfg)
    res = engine.run(wf, args.strategy)
    stages = _stage_report(res)
    print(f"{spec.name}: {data.cardinality} rows, strategy {args.strategy}, "
          f"{engine.topology.workers} workers, backend {engine.backend}")
    print(res.plan.explain())
    print(f"wall {res.stats.wall_ms:.1f} ms")
    for r in res.stats.stages:
        print(f"  {r['stage']:<44} {r['ms']:>10.1f} ms  runs={r['runs']}")
    if args.explain_plan:
        print(res.plan.to_json())
    doc = _report(spec.name, args.strategy, engine.topology.workers, round(res.stats.wall_ms, 3), stages,
                  checksums(res.result), run=res.stats.to_dict(), rows=data.cardinality)
    _emit_json(args, doc)
    return EXIT_OK


def cmd_gen(args) -> int:
    spec = WORKLOADS[args.workload]
    data = spec.dataset(rows=args.rows, seed=args.seed, **_overrides(args))
    write_csv(args.out, data)
    print(f"wrote {data.cardinality} rows x {data.arity} columns to {args.out}")
    _emit_json(args, {"workload": spec.name, "rows": data.cardinality, "schema": data.schema, "path": args.out})
    return EXIT_OK


def _udfs_of(source: str, seed: int) -> list[UdfProgram]:
    if source in WORKLOADS:
        spec = WORKLOADS[source]
        # the UDFs do not depend on the data, so a tiny dataset suffices
        wf = spec.workflow(spec.dataset(rows=16, seed=seed))
        seen, out = set(), []
        for n in wf.nodes():
            for p in (n.udf, n.key):
                if p is not None and p.name not in seen:
                    seen.add(p.name)
                    out.append(p)
        return out
    path = Path(source)
    if not path.exists():
        raise UsageError(f"{source!r} is neither a workload ({', '.join(sorted(WORKLOADS))}) nor a file")
    return parse_programs(path.read_text())


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    stats = [analyze(p, cfg.profile) for p in _udfs_of(args.source, args.seed)]
    print(format_report(stats))
    _emit_json(args, report_rows(stats))
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _config(args)
    _, _, wf = _workflow(args)
    ap, ep = _engine(cfg).synthesize(wf, args.strategy)
    if args.explain:
        print(ap.explain())
        print()
    print(ep.explain())
    _emit_json(args, {"abstract": json.loads(ap.to_json()), "plan": ep.to_dict()})
    return EXIT_OK


def cmd_bench_strategies(args) -> int:
    cfg = _config(args)
    spec, data, wf = _workflow(args)
    engine = _engine(cfg)
    timings = bench_strategies(wf, engine, repeats=args.repeats)
    best = min(t.median_ms for t in timings)
    print(f"{spec.name}: {data.cardinality} rows, {engine.topology.workers} workers; results agree")
    print(f"{'strategy':<12}{'median ms':>12}{'vs best':>10}")
    for t in timings:
        print(f"{t.label:<12}{t.median_ms:>12.1f}{t.median_ms / best:>10.2f}")
    doc = _report(spec.name, "all", engine.topology.workers, {t.label: t.median_ms for t in timings}, [],
                  timings[0].checksums, series=[t.to_dict() for t in timings], rows=data.cardinality)
    _emit_json(args, doc)
    return EXIT_OK


def cmd_bench_reduce(args) -> int:
    cfg = _config(args)
    engine = _engine(cfg)
    sizes = _ints(args.sizes, "--sizes")
    points = []
    print(f"{'benchmark':<20}{'MB':>6}{'fast ms':>10}{'hash ms':>10}{'speedup':>9}")
    for bench in ("reduction-variable", "direct-index"):
        for mb in sizes:
            pt = bench_lowering(bench, mb, engine, seed=args.seed, repeats=args.repeats)
            points.append(pt)
            print(f"{bench:<20}{mb:>6}{pt.fast.median_ms:>10.1f}{pt.hashed.median_ms:>10.1f}{pt.speedup:>9.2f}")
    doc = _report("reduce", "adaptive", engine.topology.workers, {f"{p.benchmark}@{p.size_mb}MB": p.fast.median_ms
                                                                  for p in points},
                  [], {}, series=[p.to_dict() for p in points])
    _emit_json(args, doc)
    return EXIT_OK


def cmd_scale(args) -> int:
    cfg = _config(args)
    engine = _engine(cfg)
    workers = _ints(args.workers, "--workers")
    points = weak_scaling(workers, args.rows_per_worker, engine, seed=args.seed, iters=args.iters,
                          repeats=args.repeats)
    print(f"{'workers':>8}{'rows':>12}{'median ms':>12}")
    for p in points:
        print(f"{p.workers:>8}{p.rows:>12}{p.timing.median_ms:>12.1f}")
    walls = [p.timing.median_ms for p in points]
    ratio = max(walls) / max(min(walls), 1e-9)
    print(f"max/min runtime ratio {ratio:.2f}")
    doc = _report("kmeans", "adaptive", max(workers), {str(p.workers): p.timing.median_ms for p in points}, [],
                  points[-1].timing.checksums, series=[p.to_dict() for p in points], ratio=round(ratio, 4))
    _emit_json(args, doc)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "gen": cmd_gen,
    "analyze": cmd_analyze,
    "plan": cmd_plan,
    "bench-strategies": cmd_bench_strategies,
    "bench-reduce": cmd_bench_reduce,
    "scale": cmd_scale,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, IRSyntaxError, ContractViolation, FileNotFoundError) as exc:
        print(f"tupleflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExecutionError, ResultMismatch, RuntimeError, ValueError, MemoryError) as exc:
        print(f"tupleflow: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
