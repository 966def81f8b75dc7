"""Logical planning: predicate pushdown, join side ordering and pipeline-breaker marking."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping

from .algebra import BINARY, BREAKERS, Node, Workflow
from .analyzer import FunctionStats, HardwareProfile, analyze
from .ir import Idx, Instr, UdfProgram, validate

logger = logging.getLogger(__name__)

SELECTIVITY = 0.5

# mapping cardinality class per operator kind
CONTRACT = {
    "source": "source",
    "selection": "1:0..1",
    "filter": "1:0..1",
    "projection": "1:1",
    "rename": "1:1",
    "map": "1:1",
    "flatmap": "1:N",
    "reduce": "N:1",
    "update": "C->C",
    "loop": "C->b",
    "cartesian": "relational",
    "theta_join": "relational",
    "union": "relational",
    "difference": "relational",
}


class PlanningError(ValueError):
    pass


@dataclass
class PlanOp:
    node: Node
    breaker: bool
    contract: str
    stats: FunctionStats | None = None
    key_stats: FunctionStats | None = None
    est_rows: float = 0.0
    swap: bool = False

    @property
    def id(self) -> int:
        return self.node.id

    @property
    def kind(self) -> str:
        return self.node.kind

    @property
    def udf(self) -> UdfProgram | None:
        return self.node.udf

    @property
    def input_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.node.inputs)

    @property
    def label(self) -> str:
        return self.node.label

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "op": self.label,
            "inputs": list(self.input_ids),
            "contract": self.contract,
            "breaker": self.breaker,
            "est_rows": self.est_rows,
        }
        if self.swap:
            d["swap_sides"] = True
        if self.stats is not None:
            s = self.stats
            d["stats"] = {
                "vectorizable": s.vectorizable,
                "compute_cycles": s.predicted_compute_cycles,
                "load_cycles": round(s.load_cycles, 4),
                "boundedness": s.boundedness,
            }
        return d


@dataclass
class AbstractPlan:
    ops: list[PlanOp]
    root: int
    rewrites: list[str] = field(default_factory=list)

    def op(self, node_id: int) -> PlanOp:
        for o in self.ops:
            if o.id == node_id:
                return o
        raise KeyError(node_id)

    def consumers(self) -> dict[int, int]:
        count = {o.id: 0 for o in self.ops}
        for o in self.ops:
            for i in o.input_ids:
                count[i] += 1
        count[self.root] += 1
        return count

    def workflow(self) -> Workflow:
        return Workflow(self.ops[-1].node)

    def explain(self) -> str:
        lines = []
        for o in self.ops:
            flag = " [breaker]" if o.breaker else ""
            swap = " [sides swapped]" if o.swap else ""
            stats = ""
            if o.stats is not None:
                s = o.stats
                stats = (
                    f"  vec={'yes' if s.vectorizable else 'no'} compute={s.predicted_compute_cycles:.2f}"
                    f" load={s.load_cycles:.2f} {s.boundedness}"
                )
            inputs = ",".join(f"#{i}" for i in o.input_ids)
            lines.append(f"#{o.id:<4} {o.label:<28} <- {inputs or '-':<8} {o.contract:<10}{flag}{swap}{stats}")
        for r in self.rewrites:
            lines.append(f"rewrite: {r}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({"ops": [o.to_dict() for o in self.ops], "rewrites": self.rewrites}, indent=2)


def copy_source(f: UdfProgram, out_field: int) -> int | None:
    """Input field that map ``f`` copies unchanged into ``out_field``, if any."""
    if f.kind != "map":
        return None
    defs = {i.dest: i for i in f.flat if i.dest is not None}
    for ins in f.flat:
        if ins.op == "store-field" and ins.args[0].offset == out_field:
            src = defs.get(ins.args[1])
            if src is not None and src.op == "load-field":
                return src.args[0].offset
            return None
    return None


def _remap_fields(p: UdfProgram, mapping: Mapping[int, int], in_types) -> UdfProgram:
    body = []
    for ins in p.flat:
        if ins.op == "load-field":
            ins = Instr(ins.op, ins.dest, (Idx(None, mapping[ins.args[0].offset]),))
        body.append(ins)
    return validate(replace(p, body=tuple(body), in_types=tuple(in_types)))


def _try_pushdown(node: Node, consumers: dict[int, int]) -> Node | None:
    """filter(map(x)) -> map(filter'(x)) when the filter reads only copied fields."""
    if node.kind not in ("filter", "selection"):
        return None
    below = node.inputs[0]
    if below.kind not in ("map", "projection") or consumers.get(below.id, 0) != 1:
        return None
    mapping = {}
    for j in node.udf.fields_read:
        src = copy_source(below.udf, j)
        if src is None:
            return None
        mapping[j] = src
    under = below.inputs[0]
    pred = _remap_fields(node.udf, mapping, under.types)
    pushed = Node(node.kind, (under,), udf=pred, schema=under.schema, context_schema=under.context_schema)
    return Node(below.kind, (pushed,), udf=below.udf, schema=below.schema, context_schema=below.context_schema)


def _rewrite(root: Node, rewrites: list[str]) -> Node:
    changed = True
    while changed:
        changed = False
        consumers: dict[int, int] = {}
        for n in root.ancestors():
            for i in n.inputs:
                consumers[i.id] = consumers.get(i.id, 0) + 1
        memo: dict[int, Node] = {}

        def visit(n: Node) -> Node:
            nonlocal changed
            if n.id in memo:
                return memo[n.id]
            new_inputs = tuple(visit(i) for i in n.inputs)
            out = n if new_inputs == n.inputs else replace(n, inputs=new_inputs)
            if not changed:
                pushed = _try_pushdown(out, consumers)
                if pushed is not None:
                    rewrites.append(f"pushed {n.label} below {n.inputs[0].label}")
                    changed = True
                    out = pushed
            memo[n.id] = out
            return out

        root = visit(root)
    return root


def _topo(root: Node) -> list[Node]:
    order: list[Node] = []
    state: dict[int, int] = {}

    def visit(n: Node):
        s = state.get(n.id)
        if s == 1:
            raise PlanningError(f"workflow contains a cycle through {n.label}")
        if s == 2:
            return
        state[n.id] = 1
        for i in n.inputs:
            visit(i)
        state[n.id] = 2
        order.append(n)

    visit(root)
    return order


def _estimate(n: Node, est: dict[int, float]) -> float:
    k = n.kind
    if k == "source":
        return float(n.source.relation.cardinality)
    ins = [est[i.id] for i in n.inputs]
    if k in ("selection", "filter"):
        return ins[0] * SELECTIVITY
    if k == "flatmap":
        return ins[0] * n.udf.emit_count
    if k == "reduce":
        return ins[0] if n.key is not None else 1.0
    if k == "cartesian":
        return ins[0] * ins[1]
    if k == "theta_join":
        return ins[0] * ins[1] * SELECTIVITY
    if k == "union":
        return ins[0] + ins[1]
    return ins[0]


def plan(
    w: Workflow,
    stats: Mapping[str, FunctionStats] | None = None,
    hw: HardwareProfile | None = None,
    optimize: bool = True,
) -> AbstractPlan:
    """Translate ``w`` into an annotated, topologically ordered operator list.

    ``stats`` overrides analyzer output per UDF name (used to force decisions).
    """
    hw = hw or HardwareProfile()
    stats = dict(stats or {})
    rewrites: list[str] = []
    root = _rewrite(w.node, rewrites) if optimize else w.node
    ops = []
    est: dict[int, float] = {}
    for n in _topo(root):
        est[n.id] = _estimate(n, est)
        st = None
        if n.udf is not None:
            st = stats.get(n.udf.name) or analyze(n.udf, hw)
        kst = analyze(n.key, hw) if n.key is not None else None
        op = PlanOp(n, n.kind in BREAKERS, CONTRACT[n.kind], st, kst, est[n.id])
        if optimize and n.kind in ("cartesian", "theta_join"):
            left, right = (est[i.id] for i in n.inputs)
            if right < left:
                op.swap = True
                rewrites.append(f"{n.label}#{n.id}: smaller right input iterated as outer side")
        ops.append(op)
    for r in rewrites:
        logger.debug("planner: %s", r)
    return AbstractPlan(ops, root.id, rewrites)
