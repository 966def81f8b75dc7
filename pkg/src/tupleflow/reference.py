"""Row-at-a-time oracle evaluation of a workflow through the IR interpreter.

This path shares nothing with planning or code generation: it walks the
logical DAG exactly as written and calls :func:`interpret` once per tuple.
"""

from __future__ import annotations

import numpy as np

from .algebra import Node, Workflow
from .context import ACC_DTYPE, NUMPY_DTYPE, Context, merge_deltas
from .ir import interpret
from .relation import Relation, TupleSet


def apply_deltas(ctx: Context, sets) -> Context:
    out = ctx.copy()
    schema = out.schema
    for key, acc in merge_deltas(sets, schema).items():
        cur = out[key]
        out[key] = (cur.astype(acc.dtype) + acc).astype(cur.dtype)
    return out


def _rows(rel: Relation) -> list[tuple]:
    return [rel.row(i) for i in range(rel.cardinality)]


def _apply_unary(node: Node, ts: TupleSet) -> TupleSet:
    rel, ctx = ts.relation, ts.context
    kind = node.kind
    if kind in ("selection", "filter"):
        keep = [r for r in _rows(rel) if interpret(node.udf, r, ctx)]
        return TupleSet(Relation.from_rows(node.schema, keep), ctx)
    if kind in ("map", "projection"):
        out = [interpret(node.udf, r, ctx) for r in _rows(rel)]
        return TupleSet(Relation.from_rows(node.schema, out), ctx)
    if kind == "flatmap":
        out = [t for r in _rows(rel) for t in interpret(node.udf, r, ctx)]
        return TupleSet(Relation.from_rows(node.schema, out), ctx)
    if kind == "rename":
        cols = [rel.columns[j] for j in node.order]
        return TupleSet(Relation.from_columns(node.schema, cols, rel.cardinality), ctx)
    if kind == "reduce":
        return _reduce(node, ts)
    if kind == "update":
        new = ctx.copy()
        interpret(node.udf, (), new)
        return TupleSet(rel, new)
    raise ValueError(f"not a unary tuple operator: {kind}")


def _reduce(node: Node, ts: TupleSet) -> TupleSet:
    rel, ctx = ts.relation, ts.context
    agg_types = node.udf.agg_types
    groups: dict[int, list] = {}
    sets = []
    for r in _rows(rel):
        key = interpret(node.key, r, ctx) if node.key is not None else 0
        eff = interpret(node.udf, r, ctx)
        acc = groups.setdefault(key, [ACC_DTYPE[t].type(0) for t in agg_types])
        for slot, v in eff.agg:
            acc[slot] = acc[slot] + ACC_DTYPE[agg_types[slot]].type(v)
        sets.append(eff.updates)
    new_ctx = apply_deltas(ctx, sets)
    if node.key is None:
        acc = groups.get(0, [ACC_DTYPE[t].type(0) for t in agg_types])
        cols = [np.array([v], dtype=NUMPY_DTYPE[t]) for v, t in zip(acc, agg_types)]
        return TupleSet(Relation.from_columns(node.schema, cols, 1), new_ctx)
    keys = sorted(groups)
    cols = [np.array(keys, dtype=np.int32)]
    for j, t in enumerate(agg_types):
        cols.append(np.array([groups[k][j] for k in keys], dtype=ACC_DTYPE[t]).astype(NUMPY_DTYPE[t]))
    return TupleSet(Relation.from_columns(node.schema, cols, len(keys)), new_ctx)


def _binary(node: Node, left: TupleSet, right: TupleSet) -> TupleSet:
    ctx = left.context.merged(right.context)
    lrows, rrows = _rows(left.relation), _rows(right.relation)
    if node.kind == "cartesian":
        out = [a + b for a in lrows for b in rrows]
    elif node.kind == "theta_join":
        out = [a + b for a in lrows for b in rrows if interpret(node.udf, a + b)]
    elif node.kind == "union":
        out = lrows + rrows
    elif node.kind == "difference":
        present = {tuple(x.item() for x in r) for r in rrows}
        out = [r for r in lrows if tuple(x.item() for x in r) not in present]
    else:
        raise ValueError(node.kind)
    return TupleSet(Relation.from_rows(node.schema, out), ctx)


def _chain_to_source(node: Node) -> list[Node]:
    chain = []
    while node.kind != "source":
        chain.append(node)
        node = node.inputs[0]
    chain.append(node)
    return chain[::-1]


def _eval(node: Node, memo: dict[int, TupleSet]) -> TupleSet:
    if node.id in memo:
        return memo[node.id]
    if node.kind == "source":
        ts = node.source
        out = TupleSet(ts.relation, ts.context.copy())
    elif node.kind == "loop":
        chain = _chain_to_source(node.inputs[0])
        src = chain[0].source
        ctx = src.context.copy()
        while True:
            cur = TupleSet(src.relation, ctx)
            for n in chain[1:]:
                cur = _apply_unary(n, cur)
            ctx = cur.context.copy()
            if not interpret(node.udf, (), ctx):
                break
        out = TupleSet(cur.relation, ctx)
    elif len(node.inputs) == 2:
        out = _binary(node, _eval(node.inputs[0], memo), _eval(node.inputs[1], memo))
    else:
        out = _apply_unary(node, _eval(node.inputs[0], memo))
    memo[node.id] = out
    return out


def reference_evaluate(wf: Workflow | TupleSet) -> TupleSet:
    """Evaluate ``wf`` tuple by tuple with the interpreter; the oracle for every strategy."""
    if isinstance(wf, TupleSet):
        wf = Workflow.source(wf)
    return _eval(wf.node, {})
