"""Differential tests: engine output against the reference interpreter."""

import numpy as np
import pytest

from conftest import small_topology
from tupleflow.algebra import Workflow, WorkflowError
from tupleflow.context import F32, I32, Context
from tupleflow.corpus import random_workflow
from tupleflow.engine import Engine
from tupleflow.ir import Builder, ContractViolation
from tupleflow.reference import reference_evaluate
from tupleflow.relation import Relation, TupleSet
from tupleflow.report import mismatch_report, results_match
from tupleflow.synth import STRATEGIES


def _x(values, t=F32):
    return TupleSet(Relation.from_columns([("x", t)], [np.array(values)]))


def _rows(ts):
    return [tuple(row) for row in ts.relation.rows()]


def _check_all(wf, engine, rtol=1e-5):
    ref = reference_evaluate(wf)
    for s in STRATEGIES:
        got = engine.evaluate(wf, s)
        assert results_match(got, ref, rtol), (s, mismatch_report(got, ref, rtol))
    return ref


def test_selection(py_engine):
    b = Builder("pos", "predicate", in_types=[F32])
    b.ret(b.cmp("gt", b.field(0), b.const(0.0)))
    out = _check_all(_x([-1.0, 2.0, 3.0]).selection(b.build()), py_engine)
    assert _rows(out) == [(2.0,), (3.0,)]


def test_selection_rejects_context_reads():
    ctx = Context({"t": 0.0})
    b = Builder("p", "predicate", in_types=[F32], context=ctx)
    b.ret(b.cmp("gt", b.field(0), b.ctx("t")))
    with pytest.raises(ContractViolation, match="selection"):
        TupleSet(_x([1.0]).relation, ctx).selection(b.build())


def test_projection_and_rename(py_engine):
    rel = Relation.from_columns([("a", F32), ("b", I32)], [np.array([1.0, 2.0]), np.array([3, 4])])
    b = Builder("p", "map", in_types=[F32, I32], out_types=[I32])
    b.store(0, b.field(1))
    out = _check_all(TupleSet(rel).projection(b.build(), names=["b"]), py_engine)
    assert out.relation.arity == 1 and _rows(out) == [(3,), (4,)]
    renamed = py_engine.evaluate(TupleSet(rel).rename(["x", "y"]))
    assert list(renamed.relation.names) == ["x", "y"] and _rows(renamed) == [(1.0, 3), (2.0, 4)]


def test_map_doubles(py_engine):
    b = Builder("double", "map", in_types=[F32], out_types=[F32])
    b.store(0, b.mul(b.field(0), b.const(2.0)))
    assert _rows(_check_all(_x([1.0, 2.0]).map(b.build()), py_engine)) == [(2.0,), (4.0,)]


def test_flatmap_three_copies(py_engine):
    b = Builder("k3", "flatmap", in_types=[I32], out_types=[I32])
    b.copy_fields(1)
    for _ in range(3):
        b.emit()
    out = _check_all(_x(np.arange(5, dtype=np.int32), I32).flatmap(b.build()), py_engine)
    assert len(out) == 15


def test_single_key_sum(any_engine):
    b = Builder("sum", "reduce-body", in_types=[F32], agg_types=[F32])
    b.agg(0, b.field(0))
    out = _check_all(_x([1.0, 2.0, 3.0]).reduce(b.build()), any_engine)
    assert _rows(out) == [(6.0,)]


def test_keyed_count(any_engine):
    key = Builder("k", "key", in_types=[I32])
    key.ret_key(key.field(0))
    b = Builder("count", "reduce-body", in_types=[I32], agg_types=[I32])
    b.agg(0, b.const(1))
    out = _check_all(_x(np.array([7, 7, 9], np.int32), I32).reduce(b.build(), key=key.build()), any_engine)
    assert sorted(_rows(out)) == [(7, 2), (9, 1)]


def test_cartesian(py_engine):
    a = TupleSet(Relation.from_columns([("a", I32)], [np.array([1], np.int32)]))
    bc = TupleSet(Relation.from_columns([("b", I32)], [np.array([2, 3], np.int32)]))
    out = _check_all(a.cartesian(bc), py_engine)
    assert sorted(_rows(out)) == [(1, 2), (1, 3)]


def test_equi_join_matches_nested_loop(py_engine, rng):
    left = rng.integers(0, 5, 10).astype(np.int32)
    right = rng.integers(0, 5, 10).astype(np.int32)
    a = TupleSet(Relation.from_columns([("l", I32)], [left]))
    bts = TupleSet(Relation.from_columns([("r", I32)], [right]))
    b = Builder("eq", "predicate", in_types=[I32, I32])
    b.ret(b.cmp("eq", b.field(0), b.field(1)))
    out = _check_all(a.theta_join(bts, b.build()), py_engine)
    want = sorted((int(x), int(y)) for x in left for y in right if x == y)
    assert sorted(_rows(out)) == want


def test_union_and_difference(py_engine):
    a, b = _x(np.array([1, 2, 3], np.int32), I32), _x(np.array([3, 4], np.int32), I32)
    assert sorted(_rows(_check_all(a.union(b), py_engine))) == [(1,), (2,), (3,), (3,), (4,)]
    assert sorted(_rows(_check_all(a.difference(b), py_engine))) == [(1,), (2,)]


def test_union_merges_contexts():
    a = TupleSet(_x([1.0]).relation, Context({"k": 1}))
    b = TupleSet(_x([2.0]).relation, Context({"k": 2}))
    out = reference_evaluate(a.union(b))
    assert int(out.context["k.left"]) == 1 and int(out.context["k.right"]) == 2


def test_union_schema_mismatch():
    with pytest.raises(WorkflowError):
        _x([1.0]).union(_x(np.array([1], np.int32), I32))


def test_non_commutative_reduce_rejected():
    ctx = Context({"s": 0.0})
    b = Builder("bad", "reduce-body", in_types=[F32], context=ctx)
    with pytest.raises((ContractViolation, KeyError)):
        b.ctx_store("s", [], b.field(0))
        b.build()


def test_loop_false_runs_body_once(py_engine):
    ctx = Context({"n": 0})
    inc = Builder("inc", "update", context=ctx)
    inc.ctx_inc("n")
    never = Builder("never", "invariant", context=ctx)
    never.ret(never.const(False))
    wf = TupleSet(_x([1.0]).relation, ctx).update(inc.build()).loop(never.build())
    assert int(_check_all(wf, py_engine).context["n"]) == 1


def test_counter_loop_runs_three_times(py_engine):
    ctx = Context({"n": 0, "iter": 0})
    inc = Builder("inc", "update", context=ctx)
    inc.ctx_inc("n")
    inv = Builder("inv", "invariant", context=ctx)
    inv.ctx_inc("iter")
    inv.ret(inv.cmp("lt", inv.ctx("iter"), inv.const(3)))
    wf = TupleSet(_x([1.0]).relation, ctx).update(inc.build()).loop(inv.build())
    assert int(_check_all(wf, py_engine).context["n"]) == 3


def test_context_unchanged_without_reduce_or_update(py_engine):
    ctx = Context({"k": np.arange(3, dtype=np.float32)})
    b = Builder("id", "map", in_types=[F32], out_types=[F32])
    b.copy_fields(1)
    out = py_engine.evaluate(TupleSet(_x([1.0, 2.0]).relation, ctx).map(b.build()))
    assert out.context.equals(ctx)


def test_evaluated_tupleset_is_reusable(py_engine):
    b = Builder("double", "map", in_types=[F32], out_types=[F32])
    b.store(0, b.mul(b.field(0), b.const(2.0)))
    once = py_engine.evaluate(_x([1.0, 2.0]).map(b.build()))
    twice = py_engine.evaluate(once.map(b.build()))
    assert _rows(twice) == [(4.0,), (8.0,)]
    assert _rows(py_engine.evaluate(once.map(b.build()))) == _rows(twice)


def test_empty_relation(py_engine):
    b = Builder("sum", "reduce-body", in_types=[F32], agg_types=[F32])
    b.agg(0, b.field(0))
    _check_all(_x(np.zeros(0, np.float32)).reduce(b.build()), py_engine)


@pytest.mark.parametrize("seed", range(0, 100, 7))
@pytest.mark.parametrize("workers", [1, 3])
def test_random_workflows_across_topologies(seed, workers):
    engine = Engine(backend="python", topology=small_topology(workers))
    _check_all(random_workflow(seed).workflow, engine)


@pytest.mark.parametrize("seed", [4, 9, 87, 98])
def test_random_workflows_compiled(seed, jit_engine):
    _check_all(random_workflow(seed).workflow, jit_engine)


def test_multi_node_topology_matches():
    wf = random_workflow(13).workflow
    _check_all(wf, Engine(backend="python", topology=small_topology(2, nodes=2)))
