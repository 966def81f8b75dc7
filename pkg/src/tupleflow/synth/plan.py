"""Execution-strategy synthesis: group planned operators into executable stages."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..algebra import Node
from ..analyzer import HardwareProfile
from ..ir import loop_vars, walk
from ..planner import AbstractPlan, PlanOp

STRATEGIES = ("pipeline", "operator", "tiled", "adaptive")
STRATEGY_ALIASES = {"operator-at-a-time": "operator"}
LOWERINGS = ("reduction-variable", "direct-index", "hash-table")

# operators that run inside a per-tuple stage kernel
CHAIN_OPS = ("selection", "projection", "rename", "map", "flatmap", "filter")


@dataclass(frozen=True)
class Stage:
    ops: tuple[PlanOp, ...]
    role: str  # tuple | update | loop | relational
    mode: str = "scalar-fused"  # or lane-parallel
    materialization: str = "full"  # none | full | cache-block
    reduce_lowering: str = "none"
    lanes: int = 1
    body: tuple[int, ...] = ()  # loop stages: indices of the stages re-executed per iteration

    @property
    def input_ids(self) -> tuple[int, ...]:
        return self.ops[0].input_ids

    @property
    def output_id(self) -> int:
        return self.ops[-1].id

    @property
    def reduce(self) -> PlanOp | None:
        last = self.ops[-1]
        return last if last.kind == "reduce" else None

    @property
    def chain(self) -> tuple[PlanOp, ...]:
        return tuple(o for o in self.ops if o.kind != "reduce")

    @property
    def names(self) -> list[str]:
        return [o.udf.name if o.udf is not None else o.kind for o in self.ops]

    @property
    def one_to_one(self) -> bool:
        return all(o.kind in ("map", "projection", "rename") for o in self.chain)

    def describe(self) -> str:
        parts = [self.role, "{" + ", ".join(self.names) + "}"]
        if self.role == "tuple":
            parts.append(self.mode)
            parts.append(f"materialize={self.materialization}")
            if self.reduce_lowering != "none":
                parts.append(f"reduce={self.reduce_lowering}")
            if self.lanes > 1:
                parts.append(f"lanes={self.lanes}")
        if self.role == "loop":
            parts.append(f"body={list(self.body)}")
        return " ".join(parts)

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "ops": self.names,
            "mode": self.mode,
            "materialization": self.materialization,
            "reduce_lowering": self.reduce_lowering,
            "lanes": self.lanes,
            "body": list(self.body),
        }


@dataclass(frozen=True)
class ExecutionPlan:
    strategy: str
    stages: tuple[Stage, ...]
    result_id: int
    sources: dict[int, Node] = field(default_factory=dict)
    cache_block_bytes: int = 256 * 1024

    def explain(self) -> str:
        lines = [f"strategy: {self.strategy}"]
        for i, s in enumerate(self.stages):
            lines.append(f"  [{i}] {s.describe()}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "stages": [s.to_dict() for s in self.stages]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def structure(self) -> list[tuple[str, ...]]:
        """Stage op-name groups; what the structural assertions compare."""
        return [tuple(s.names) for s in self.stages]

    def tuple_stages(self) -> list[Stage]:
        return [s for s in self.stages if s.role == "tuple"]


def lower_reduce(op: PlanOp, force: str | None = None) -> str:
    """Pick a physical aggregation scheme for a reduce operator."""
    if force is not None:
        if force not in LOWERINGS:
            raise ValueError(f"unknown reduce lowering {force!r}")
        return force
    if op.node.key is not None:
        return "hash-table"
    for ins in walk(op.udf.body):
        if ins.op in ("context-add", "context-increment"):
            if any(i.base is not None and not _is_loop_var(op, i.base) for i in ins.args[1]):
                return "direct-index"
    return "reduction-variable"


def _is_loop_var(op: PlanOp, vid: int) -> bool:
    return vid in loop_vars(op.udf.body)


# chain discovery

@dataclass
class _Segment:
    chain: list[PlanOp]
    reduce: PlanOp | None


def _segments(plan: AbstractPlan) -> list[object]:
    """Split the plan into tuple segments (chain + optional reduce) and single breaker/relational ops."""
    consumers = plan.consumers()
    items: list[object] = []
    open_seg: _Segment | None = None

    def fusable(op: PlanOp) -> bool:
        # op continues the open segment iff it reads the segment's tail and nobody else does
        if open_seg is None or open_seg.reduce is not None:
            return False
        tail = open_seg.chain[-1]
        return op.input_ids == (tail.id,) and consumers[tail.id] == 1 and tail.id != plan.root

    for op in plan.ops:
        if op.kind == "source":
            continue
        if op.kind in CHAIN_OPS:
            if fusable(op):
                open_seg.chain.append(op)
            else:
                open_seg = _Segment([op], None)
                items.append(open_seg)
        elif op.kind == "reduce":
            if fusable(op):
                open_seg.reduce = op
            else:
                open_seg = _Segment([], op)
                items.append(open_seg)
        else:
            open_seg = None
            items.append(op)
        if op.kind not in CHAIN_OPS and op.kind != "reduce":
            open_seg = None
    return items


def _reduce_lowering(seg: _Segment, force: str | None) -> str:
    return lower_reduce(seg.reduce, force) if seg.reduce is not None else "none"


def _tail_materialization(seg: _Segment) -> str:
    return "none" if seg.reduce is not None else "full"


def _vec(op: PlanOp, hw: HardwareProfile) -> bool:
    if hw.lanes <= 1:
        return False
    if op.kind in ("map", "projection"):
        return bool(op.stats and op.stats.vectorizable)
    return False


def _vec_reduce(op: PlanOp, lowering: str, hw: HardwareProfile) -> bool:
    return hw.lanes > 1 and lowering == "reduction-variable" and bool(op.stats and op.stats.vectorizable)


def _single_stage(ops, mode, mat, lowering, hw) -> Stage:
    lanes = hw.lanes if mode == "lane-parallel" else 1
    return Stage(tuple(ops), "tuple", mode, mat, lowering, lanes)


def _pipeline_segment(seg: _Segment, hw, force) -> list[Stage]:
    ops = seg.chain + ([seg.reduce] if seg.reduce else [])
    return [_single_stage(ops, "scalar-fused", _tail_materialization(seg), _reduce_lowering(seg, force), hw)]


def _operator_segment(seg: _Segment, hw, force, tiled: bool) -> list[Stage]:
    stages = []
    lowering = _reduce_lowering(seg, force)
    between = "cache-block" if tiled else "full"
    for k, op in enumerate(seg.chain):
        last = k == len(seg.chain) - 1 and seg.reduce is None
        mode = "lane-parallel" if _vec(op, hw) else "scalar-fused"
        stages.append(_single_stage([op], mode, "full" if last else between, "none", hw))
    if seg.reduce is not None:
        mode = "lane-parallel" if _vec_reduce(seg.reduce, lowering, hw) else "scalar-fused"
        stages.append(_single_stage([seg.reduce], mode, "none", lowering, hw))
    return stages


def _adaptive_segment(seg: _Segment, hw, force) -> list[Stage]:
    lowering = _reduce_lowering(seg, force)
    # maximal runs of vectorizable / nonvectorizable operators, in plan order
    runs: list[tuple[bool, list[PlanOp]]] = []
    for op in seg.chain:
        v = _vec(op, hw)
        if op.kind == "rename" and runs:
            runs[-1][1].append(op)
        elif runs and runs[-1][0] == v:
            runs[-1][1].append(op)
        else:
            runs.append((v, [op]))
    # a memory-bound vectorizable run at the start gains nothing from a split
    if len(runs) >= 1 and runs[0][0]:
        compute = sum(o.stats.predicted_compute_cycles for o in runs[0][1] if o.stats)
        load = runs[0][1][0].stats.load_cycles if runs[0][1][0].stats else 0.0
        if compute <= load:
            head = runs.pop(0)[1]
            if runs:
                runs[0] = (False, head + runs[0][1])
            else:
                runs.append((False, head))
    stages: list[tuple[bool, list[PlanOp]]] = [(v, list(ops)) for v, ops in runs]
    reduce_alone = False
    if seg.reduce is not None:
        if not stages:
            reduce_alone = True
        else:
            v, ops = stages[-1]
            if not v or _vec_reduce(seg.reduce, lowering, hw):
                ops.append(seg.reduce)
            else:
                reduce_alone = True
    out = []
    for k, (v, ops) in enumerate(stages):
        last = k == len(stages) - 1 and not reduce_alone
        mat = _tail_materialization(seg) if last else "cache-block"
        out.append(_single_stage(ops, "lane-parallel" if v else "scalar-fused", mat,
                                 lowering if ops[-1].kind == "reduce" else "none", hw))
    if reduce_alone:
        mode = "lane-parallel" if _vec_reduce(seg.reduce, lowering, hw) else "scalar-fused"
        out.append(_single_stage([seg.reduce], mode, "none", lowering, hw))
    return out


def _synthesize(plan: AbstractPlan, strategy: str, hw: HardwareProfile, force_lowering: str | None) -> ExecutionPlan:
    strategy = STRATEGY_ALIASES.get(strategy, strategy)
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}")
    stages: list[Stage] = []
    for item in _segments(plan):
        if isinstance(item, _Segment):
            if strategy == "pipeline":
                stages.extend(_pipeline_segment(item, hw, force_lowering))
            elif strategy == "operator":
                stages.extend(_operator_segment(item, hw, force_lowering, tiled=False))
            elif strategy == "tiled":
                stages.extend(_operator_segment(item, hw, force_lowering, tiled=True))
            else:
                stages.extend(_adaptive_segment(item, hw, force_lowering))
        elif item.kind == "update":
            stages.append(Stage((item,), "update", materialization="none"))
        elif item.kind == "loop":
            body_nodes = {n.id for n in item.node.ancestors()} - {item.id}
            body = tuple(i for i, s in enumerate(stages) if all(o.id in body_nodes for o in s.ops))
            stages.append(Stage((item,), "loop", materialization="none", body=body))
        else:
            stages.append(Stage((item,), "relational"))
    sources = {o.id: o.node for o in plan.ops if o.kind == "source"}
    return ExecutionPlan(strategy, tuple(stages), plan.root, sources, hw.cache_block_bytes)


def synthesize_pipeline(plan: AbstractPlan, hw: HardwareProfile | None = None, force_lowering: str | None = None) -> ExecutionPlan:
    """Fuse everything between pipeline breakers into one scalar pass."""
    return _synthesize(plan, "pipeline", hw or HardwareProfile(), force_lowering)


def synthesize_operator_at_a_time(plan: AbstractPlan, tiled: bool = False, hw: HardwareProfile | None = None,
                                  force_lowering: str | None = None) -> ExecutionPlan:
    """One stage per operator; full materialization, or cache-sized blocks when ``tiled``."""
    return _synthesize(plan, "tiled" if tiled else "operator", hw or HardwareProfile(), force_lowering)


def synthesize_adaptive(plan: AbstractPlan, hw: HardwareProfile | None = None, force_lowering: str | None = None) -> ExecutionPlan:
    """Split map pipelines at vectorizability boundaries unless the vectorizable head is memory-bound."""
    return _synthesize(plan, "adaptive", hw or HardwareProfile(), force_lowering)


def synthesize(plan: AbstractPlan, strategy: str = "adaptive", hw: HardwareProfile | None = None,
               force_lowering: str | None = None) -> ExecutionPlan:
    return _synthesize(plan, strategy, hw or HardwareProfile(), force_lowering)
