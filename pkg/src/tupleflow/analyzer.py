"""Static per-UDF statistics: vectorizability, compute cycles, load cycles."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Mapping

from .ir import UdfProgram, loop_vars, walk

# Cycles per instruction. Calibrated so the four k-means UDFs land near the
# predicted column of the reference function statistics (29/17/15/21).
# min-select is charged per operand (one compare + conditional move each).
DEFAULT_CPI: dict[str, float] = {
    "const": 0.0,
    "for-range": 0.0,
    "load-field": 0.5,
    "store-field": 1.0,
    "load-context": 0.5,
    "store-context": 0.25,
    "context-add": 4.5,
    "context-increment": 4.5,
    "add": 0.5,
    "sub": 0.5,
    "mul": 0.5,
    "div": 2.0,
    "sqrt": 4.0,
    "exp": 8.0,
    "log": 8.0,
    "to-float": 0.5,
    "min-select": 4.0,
    "cmp": 1.0,
    "select": 1.0,
    "emit-tuple": 1.0,
    "return-bool": 0.5,
    "return-key": 0.5,
    "agg-add": 1.0,
}

FIELD_BYTES = 4


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class HardwareProfile:
    clock_hz: float = 2.8e9
    bandwidth_per_core_bytes_per_s: float = 5.97e9
    lane_width_bits: int = 256
    cache_block_bytes: int = 256 * 1024
    worker_threads: int = 4
    cpi_table: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_CPI))

    def __post_init__(self):
        for name in ("clock_hz", "bandwidth_per_core_bytes_per_s", "lane_width_bits",
                     "cache_block_bytes", "worker_threads"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.lane_width_bits % 32:
            raise ValueError("lane_width_bits must be a multiple of 32")

    @property
    def lanes(self) -> int:
        """32-bit lanes per SIMD register."""
        return self.lane_width_bits // 32

    def with_(self, **kw) -> "HardwareProfile":
        return replace(self, **kw)


@dataclass(frozen=True)
class FunctionStats:
    name: str
    kind: str
    vectorizable: bool
    predicted_compute_cycles: float
    load_cycles: float
    operand_bytes: int

    @property
    def boundedness(self) -> str:
        return classify_boundedness(self)


def compute_load_cycles(operand_bytes: float, hw: HardwareProfile) -> float:
    """Cycles to fetch ``operand_bytes`` from memory: clock * bytes / per-core bandwidth."""
    if operand_bytes < 0:
        raise ValueError("operand_bytes must be non-negative")
    return hw.clock_hz * operand_bytes / hw.bandwidth_per_core_bytes_per_s


def classify_boundedness(stats: FunctionStats) -> str:
    # ties count as memory-bound: splitting cannot pay off
    return "compute-bound" if stats.predicted_compute_cycles > stats.load_cycles else "memory-bound"


def analyze_vectorizability(p: UdfProgram) -> bool:
    """True iff ``p`` is straight-line arithmetic over tuple fields and constant-indexed context.

    Works on unvalidated bodies so it can be probed on arbitrary instruction subsets.
    """
    if p.kind in ("update", "invariant"):
        return False
    loop_ids = loop_vars(p.body)
    consts = {i.dest for i in walk(p.body) if i.op == "const"}

    def static(idx) -> bool:
        return idx.base is None or idx.base in loop_ids

    for ins in walk(p.body):
        op, a = ins.op, ins.args
        if op == "min-select":
            return False
        if op == "select" and a[0] not in consts:
            return False
        if op in ("load-context", "context-add", "context-increment", "store-context"):
            if not all(static(i) for i in a[1]):
                return False
        if op in ("load-field", "store-field") and not static(a[0]):
            return False
    return True


def predict_compute_cycles(p: UdfProgram, hw: HardwareProfile) -> float:
    """Sum of per-instruction cycle estimates over the unrolled body."""
    total = 0.0
    cpi = hw.cpi_table
    for ins in p.flat:
        if ins.op not in cpi:
            raise AnalysisError(f"no CPI estimate for opcode {ins.op!r} (UDF {p.name!r})")
        weight = len(ins.args) if ins.op == "min-select" else 1
        total += cpi[ins.op] * weight
    return total


def operand_bytes(p: UdfProgram) -> int:
    """Bytes of distinct input fields the UDF actually computes with.

    Fields that are only copied to the same output position are not fetched
    for computation and do not count.
    """
    if p.kind in ("update", "invariant"):
        return 0
    loads = {i.dest: i.args[0].offset for i in p.flat if i.op == "load-field"}
    used: set[int] = set()
    for ins in p.flat:
        if ins.op == "store-field":
            src = ins.args[1]
            if src in loads and loads[src] == ins.args[0].offset:
                continue
        for v in ins.value_operands():
            if v in loads:
                used.add(loads[v])
    return FIELD_BYTES * len(used)


def analyze(p: UdfProgram, hw: HardwareProfile | None = None) -> FunctionStats:
    hw = hw or HardwareProfile()
    nbytes = operand_bytes(p)
    return FunctionStats(
        name=p.name,
        kind=p.kind,
        vectorizable=analyze_vectorizability(p),
        predicted_compute_cycles=predict_compute_cycles(p, hw),
        load_cycles=compute_load_cycles(nbytes, hw),
        operand_bytes=nbytes,
    )


_TYPE_LABEL = {"reduce-body": "reduce", "predicate": "filter", "invariant": "loop"}


def report_rows(stats: Iterable[FunctionStats]) -> list[dict]:
    rows = []
    for s in stats:
        d = asdict(s)
        d["type"] = _TYPE_LABEL.get(s.kind, s.kind)
        d["boundedness"] = classify_boundedness(s)
        rows.append(d)
    return rows


def format_report(stats: Iterable[FunctionStats]) -> str:
    rows = report_rows(stats)
    header = f"{'Function':<14}{'Type':<9}{'Vectorizable':<14}{'Compute':>9}{'Load':>8}  Bound"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['name']:<14}{r['type']:<9}{'yes' if r['vectorizable'] else 'no':<14}"
            f"{r['predicted_compute_cycles']:>9.2f}{r['load_cycles']:>8.2f}  {r['boundedness']}"
        )
    return "\n".join(lines)


def report_json(stats: Iterable[FunctionStats]) -> str:
    return json.dumps(report_rows(stats), indent=2)
