"""Benchmark harness: strategy comparison, reduce lowerings and weak scaling.

Every comparison cross-checks results before it reports a timing; a mismatch
raises :class:`ResultMismatch` instead.
"""

from __future__ import annotations

import logging
import statistics
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .algebra import Workflow
from .context import F32, I32, Context
from .engine import Engine, EvalResult
from .ir import Builder
from .relation import Relation, TupleSet
from .report import checksums, mismatch_report, results_match
from .runtime import TierTopology
from .synth import STRATEGIES
from .workloads import WORKLOADS

logger = logging.getLogger(__name__)

WARMUP = 1
REPEATS = 5
REDUCE_KEYS = 10
MB = 1 << 20


class ResultMismatch(RuntimeError):
    """Two runs that must agree produced different results."""


@dataclass
class Timing:
    label: str
    median_ms: float
    runs_ms: list[float]
    checksums: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def timed(run: Callable[[], EvalResult], label: str, warmup: int = WARMUP,
          repeats: int = REPEATS) -> tuple[Timing, EvalResult]:
    """``warmup`` untimed runs, then the median wall time of ``repeats`` runs."""
    for _ in range(warmup):
        run()
    times, last = [], None
    for _ in range(max(1, repeats)):
        last = run()
        times.append(last.stats.wall_ms)
    return Timing(label, round(statistics.median(times), 3), [round(t, 3) for t in times],
                  checksums(last.result)), last


def _check(label: str, a: EvalResult, b: EvalResult, rtol: float) -> None:
    if not results_match(a.result, b.result, rtol=rtol):
        raise ResultMismatch(f"{label}: {'; '.join(mismatch_report(a.result, b.result, rtol))}")


def bench_strategies(wf: Workflow, engine: Engine, strategies: Sequence[str] = STRATEGIES,
                     warmup: int = WARMUP, repeats: int = REPEATS, rtol: float = 1e-4) -> list[Timing]:
    """Time every strategy on one workflow; results must agree within ``rtol``."""
    out, first = [], None
    for s in strategies:
        t, res = timed(lambda: engine.run(wf, s), s, warmup, repeats)
        if first is None:
            first = res
        else:
            _check(f"strategy {s} vs {strategies[0]}", res, first, rtol)
        logger.info("%s: %.1f ms", s, t.median_ms)
        out.append(t)
    return out


# reduce lowering microbenchmarks

def sum_count_workflow(rows: int, seed: int = 0) -> Workflow:
    """One f32 column reduced to a single (sum, count) group."""
    x = np.random.default_rng(seed).random(rows, dtype=np.float32)
    rel = Relation.from_columns([("x", F32)], [x])
    b = Builder("sum_count", "reduce-body", in_types=[F32], agg_types=[F32, I32])
    b.agg(0, b.field(0))
    b.agg(1, b.const(1))
    return Workflow.source(TupleSet(rel)).reduce(b.build(), names=["sum", "count"])


def key_count_workflow(rows: int, keys: int = REDUCE_KEYS, seed: int = 0) -> Workflow:
    """Count rows per key into a ``keys``-entry Context array."""
    k = np.random.default_rng(seed).integers(0, keys, rows, dtype=np.int32)
    rel = Relation.from_columns([("k", I32)], [k])
    ctx = Context({"counts": np.zeros(keys, dtype=np.int32)})
    b = Builder("key_count", "reduce-body", in_types=[I32], context=ctx)
    b.ctx_inc("counts", b.field(0))
    return Workflow.source(TupleSet(rel, ctx)).reduce(b.build())


@dataclass
class ReducePoint:
    benchmark: str
    size_mb: float
    rows: int
    fast: Timing
    hashed: Timing

    @property
    def speedup(self) -> float:
        return self.hashed.median_ms / max(self.fast.median_ms, 1e-9)

    def to_dict(self) -> dict:
        return {"benchmark": self.benchmark, "size_mb": self.size_mb, "rows": self.rows,
                "fast_ms": self.fast.median_ms, "hash_ms": self.hashed.median_ms,
                "speedup": round(self.speedup, 3), "checksums": self.fast.checksums}


def bench_lowering(benchmark: str, size_mb: float, engine: Engine, seed: int = 0,
                   warmup: int = WARMUP, repeats: int = REPEATS) -> ReducePoint:
    """``reduction-variable`` (sum-count) or ``direct-index`` (key-count) against a hash table."""
    rows = max(1, int(size_mb * MB) // 4)
    if benchmark == "reduction-variable":
        wf = sum_count_workflow(rows, seed)
    elif benchmark == "direct-index":
        wf = key_count_workflow(rows, seed=seed)
    else:
        raise ValueError(f"unknown reduce benchmark {benchmark!r}")
    fast, a = timed(lambda: engine.run(wf, "adaptive", force_lowering=benchmark), benchmark, warmup, repeats)
    hashed, b = timed(lambda: engine.run(wf, "adaptive", force_lowering="hash-table"), "hash-table",
                      warmup, repeats)
    _check(f"{benchmark} vs hash-table", a, b, 1e-5)
    return ReducePoint(benchmark, size_mb, rows, fast, hashed)


# weak scaling

@dataclass
class ScalePoint:
    workers: int
    rows: int
    timing: Timing

    def to_dict(self) -> dict:
        return {"workers": self.workers, "rows": self.rows, "wall_ms": self.timing.median_ms,
                "runs_ms": self.timing.runs_ms, "checksums": self.timing.checksums}


def weak_scaling(workers: Sequence[int], rows_per_worker: int, engine: Engine, seed: int = 0,
                 iters: int = 3, warmup: int = WARMUP, repeats: int = REPEATS,
                 base: TierTopology | None = None) -> list[ScalePoint]:
    """k-means with ``rows_per_worker * w`` rows on ``w`` executors for each ``w``.

    Every multi-executor point is cross-checked against a one-executor run at
    the same size, so the series only contains correct results.
    """
    base = base or engine.topology
    spec = WORKLOADS["kmeans"]
    out = []
    for w in workers:
        rows = rows_per_worker * w
        wf = spec.workflow(spec.dataset(rows=rows, seed=seed), iters=iters)
        topo = TierTopology(base.node_count, w, base.gm_block_bytes, base.exec_block_bytes, base.prefetch)
        t, res = timed(lambda: engine.run(wf, "adaptive", topology=topo), f"{w} workers", warmup, repeats)
        if w != 1:
            one = engine.run(wf, "adaptive", topology=TierTopology(executors_per_node=1))
            _check(f"{w} workers vs 1", res, one, 1e-4)
        out.append(ScalePoint(w, rows, t))
    return out


__all__ = [
    "ReducePoint", "ResultMismatch", "ScalePoint", "Timing", "bench_lowering", "bench_strategies",
    "key_count_workflow", "sum_count_workflow", "timed", "weak_scaling",
]
