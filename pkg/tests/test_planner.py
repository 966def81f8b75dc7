import numpy as np
import pytest

from tupleflow.algebra import Workflow
from tupleflow.context import F32, I32
from tupleflow.ir import Builder
from tupleflow.planner import plan
from tupleflow.reference import reference_evaluate
from tupleflow.relation import Relation, TupleSet
from tupleflow.report import results_match
from tupleflow.corpus import random_workflow
from tupleflow.workloads import WORKLOADS


def _source(rows=50):
    rng = np.random.default_rng(0)
    rel = Relation.from_columns([("a", F32), ("b", F32)], [rng.normal(size=rows).astype(np.float32),
                                                           rng.normal(size=rows).astype(np.float32)])
    return TupleSet(rel)


def _map(rewrite_a: bool):
    b = Builder("m", "map", in_types=[F32, F32], out_types=[F32, F32])
    a = b.field(0)
    b.store(0, b.mul(a, b.const(2.0)) if rewrite_a else a)
    b.store(1, b.add(b.field(1), b.const(1.0)))
    return b.build()


def _positive_a():
    b = Builder("pos", "predicate", in_types=[F32, F32])
    b.ret(b.cmp("gt", b.field(0), b.const(0.0)))
    return b.build()


def _kinds(ap):
    return [o.kind for o in ap.ops]


def test_filter_pushed_below_pass_through_map():
    wf = Workflow.source(_source()).map(_map(False)).filter(_positive_a())
    ap = plan(wf)
    assert _kinds(ap) == ["source", "filter", "map"]
    assert ap.rewrites
    assert results_match(reference_evaluate(ap.workflow()), reference_evaluate(wf))


def test_pushdown_blocked_when_map_rewrites_field():
    wf = Workflow.source(_source()).map(_map(True)).filter(_positive_a())
    ap = plan(wf)
    assert _kinds(ap) == ["source", "map", "filter"]
    assert not ap.rewrites


def test_breakers_marked():
    spec = WORKLOADS["kmeans"]
    ap = plan(spec.workflow(spec.dataset(rows=100), iters=2))
    for o in ap.ops:
        assert o.breaker == (o.kind in ("reduce", "update", "loop"))


def test_join_smaller_side_iterated_outer():
    big = TupleSet(Relation.from_columns([("x", I32)], [np.arange(100, dtype=np.int32)]))
    small = TupleSet(Relation.from_columns([("y", I32)], [np.arange(5, dtype=np.int32)]))
    b = Builder("eq", "predicate", in_types=[I32, I32])
    b.ret(b.cmp("eq", b.field(0), b.field(1)))
    wf = Workflow.source(big).theta_join(small, b.build())
    ap = plan(wf)
    join = [o for o in ap.ops if o.kind == "theta_join"][0]
    assert join.swap
    assert results_match(reference_evaluate(ap.workflow()), reference_evaluate(wf))


@pytest.mark.parametrize("seed", range(30))
def test_planned_and_unplanned_evaluate_identically(seed):
    wf = random_workflow(seed, max_rows=100).workflow
    assert results_match(reference_evaluate(plan(wf).workflow()), reference_evaluate(wf))


def test_explain_lists_every_op():
    spec = WORKLOADS["kmeans"]
    ap = plan(spec.workflow(spec.dataset(rows=100), iters=2))
    text = ap.explain()
    assert text.count("[breaker]") == 3
    assert "compute-bound" in text
