from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tupleflow.context import F32, I32, Context
from tupleflow.ir import (
    Builder,
    ContractViolation,
    IRSyntaxError,
    format_program,
    interpret,
    parse_program,
    unroll,
    validate,
)
from tupleflow.workloads import kmeans_context, kmeans_udfs

CENTROIDS = np.array([[0, 0], [3, 4], [6, 8]], np.float32)


def kmeans_ctx():
    return kmeans_context(2, 3, CENTROIDS)


def test_kmeans_udfs_validate():
    for p in kmeans_udfs().values():
        assert validate(p) is p


def test_distance_example():
    out = interpret(kmeans_udfs()["distance"], (0.0, 0.0), kmeans_ctx())
    assert [float(v) for v in out] == [0.0, 0.0, 0.0, 5.0, 10.0]


def test_minimum_example():
    out = interpret(kmeans_udfs()["minimum"], (0.0, 0.0, 0.0, 5.0, 10.0))
    assert int(out[2]) == 0


def test_minimum_ties_break_to_lowest_index():
    out = interpret(kmeans_udfs()["minimum"], (0.0, 0.0, 4.0, 1.0, 1.0))
    assert int(out[2]) == 1


def test_reassign_emits_deltas_without_mutating():
    ctx = kmeans_ctx()
    before = ctx.copy()
    eff = interpret(kmeans_udfs()["reassign"], (1.0, 2.0, 2), ctx)
    assert ctx.equals(before)
    got = {(d.key, d.index): d.value for d in eff.updates.deltas}
    assert got[("sum", (2, 0))] == 1.0 and got[("sum", (2, 1))] == 2.0
    assert ("ct", (2,)) in got


def test_recompute_averages():
    ctx = kmeans_context(2, 2, np.zeros((2, 2), np.float32))
    ctx["sum"] = [[2, 2], [4, 4]]
    ctx["ct"] = [2, 2]
    interpret(kmeans_udfs(2, 2)["recompute"], (), ctx)
    assert ctx["k"].tolist() == [[1, 1], [2, 2]]
    assert ctx["sum"].tolist() == [[0, 0], [0, 0]] and ctx["ct"].tolist() == [0, 0]


def test_division_by_zero_is_ieee():
    b = Builder("d", "map", in_types=[F32], out_types=[F32])
    b.store(0, b.div(b.field(0), b.const(0.0)))
    p = b.build()
    assert np.isinf(interpret(p, (1.0,))[0])
    assert np.isnan(interpret(p, (0.0,))[0])


def test_map_writing_context_is_rejected():
    ctx = Context({"k": 0.0})
    b = Builder("bad", "map", in_types=[F32], out_types=[F32], context=ctx)
    b.store(0, b.field(0))
    b.ctx_add("k", [], b.field(0))
    with pytest.raises(ContractViolation, match="context-add"):
        b.build()


def test_reduce_with_only_context_add_is_ok():
    b = Builder("ok", "reduce-body", in_types=[F32], context=Context({"s": 0.0}))
    b.ctx_add("s", [], b.field(0))
    validate(b.build())


def test_update_reading_tuple_is_rejected():
    b = Builder("bad", "update", in_types=[F32], context=Context({"s": 0.0}))
    b.ctx_store("s", [], b.field(0))
    with pytest.raises(ContractViolation):
        b.build()


def test_constant_index_out_of_range_is_rejected():
    b = Builder("bad", "map", in_types=[F32], out_types=[F32])
    b.store(0, b.field(3))
    with pytest.raises(ContractViolation):
        b.build()


def test_violation_names_the_instruction():
    b = Builder("bad", "predicate", in_types=[F32])
    b.store(0, b.field(0))
    with pytest.raises(ContractViolation) as exc:
        b.build()
    assert "store-field" in str(exc.value)


def test_text_round_trip_of_kmeans():
    for p in kmeans_udfs().values():
        q = parse_program(format_program(p))
        assert q.body == p.body and q.kind == p.kind and q.context == p.context


SUM_RANGE = """\
udf dot map
in f32 f32 f32
out f32
  %0 = sum-range f32 %1 = 0..3 yield %3
    %2 = load-field %1
    %3 = mul %2 %2
  end
  store-field 0 %0
"""


def test_sum_range_text_and_interpretation():
    p = parse_program(SUM_RANGE)
    assert format_program(p) == SUM_RANGE
    assert float(interpret(p, (1.0, 2.0, 3.0))[0]) == 14.0


def test_sum_range_builder_matches_unrolled_form():
    b = Builder("dot", "map", in_types=[F32] * 5, out_types=[F32])
    b.store(0, b.sum_range(5, body=lambda j: b.mul(b.field(j), b.const(2.0))))
    p = b.build()
    flat = p.flat
    assert not any(i.op in ("sum-range", "for-range") for i in flat)
    assert flat == unroll(p.body)
    assert float(interpret(p, (1, 2, 3, 4, 5))[0]) == 30.0


def test_unterminated_loop_is_a_syntax_error():
    with pytest.raises(IRSyntaxError, match="unterminated"):
        parse_program(SUM_RANGE.replace("  end\n", ""))


def test_syntax_error_has_line_number():
    with pytest.raises(IRSyntaxError) as exc:
        parse_program("udf x map\nin f32\nout f32\n  %0 = frobnicate 1\n")
    assert exc.value.line == 4


def test_interpret_is_deterministic():
    p = kmeans_udfs()["distance"]
    a = interpret(p, (0.3, 0.7), kmeans_ctx())
    b = interpret(p, (0.3, 0.7), kmeans_ctx())
    assert [np.float32(x).tobytes() for x in a] == [np.float32(x).tobytes() for x in b]


def test_flatmap_emits_copies():
    b = Builder("triple", "flatmap", in_types=[I32], out_types=[I32])
    b.copy_fields(1)
    for _ in range(3):
        b.emit()
    out = interpret(b.build(), (7,))
    assert [tuple(int(v) for v in t) for t in out] == [(7,), (7,), (7,)]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False, width=32), min_size=2, max_size=2))
def test_unrolled_loops_interpret_identically(xs):
    ctx = kmeans_ctx()
    p = kmeans_udfs()["distance"]
    rolled = interpret(p, tuple(xs), ctx)
    q = replace(p, body=unroll(p.body))
    assert [float(v) for v in interpret(q, tuple(xs), ctx)] == [float(v) for v in rolled]
