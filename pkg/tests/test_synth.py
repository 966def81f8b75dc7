import pytest

from tupleflow.analyzer import FunctionStats, HardwareProfile
from tupleflow.bench import key_count_workflow, sum_count_workflow
from tupleflow.planner import plan
from tupleflow.synth import (
    STRATEGIES,
    synthesize,
    synthesize_adaptive,
    synthesize_operator_at_a_time,
    synthesize_pipeline,
)
from tupleflow.workloads import WORKLOADS

TABLE_STATS = {
    "distance": FunctionStats("distance", "map", True, 29, 3.75, 8),
    "minimum": FunctionStats("minimum", "map", False, 17, 5.63, 12),
    "reassign": FunctionStats("reassign", "reduce-body", False, 15, 4.22, 12),
    "recompute": FunctionStats("recompute", "update", False, 21, 0.0, 0),
}


@pytest.fixture(scope="module")
def kmeans_wf():
    spec = WORKLOADS["kmeans"]
    return spec.workflow(spec.dataset(rows=200), iters=3)


def _tuple_structure(ep):
    return [tuple(s.names) for s in ep.tuple_stages()]


def test_pipeline_fuses_loop_body(kmeans_wf):
    ep = synthesize_pipeline(plan(kmeans_wf, TABLE_STATS))
    assert ep.structure() == [("distance", "minimum", "reassign"), ("recompute",), ("iterate",)]
    assert ep.stages[-1].body == (0, 1)


def test_operator_at_a_time_one_stage_per_operator(kmeans_wf):
    ep = synthesize_operator_at_a_time(plan(kmeans_wf, TABLE_STATS))
    assert ep.structure() == [("distance",), ("minimum",), ("reassign",), ("recompute",), ("iterate",)]
    assert [s.materialization for s in ep.tuple_stages()] == ["full", "full", "none"]
    assert ep.stages[0].mode == "lane-parallel"


def test_tiled_materializes_cache_blocks(kmeans_wf):
    ep = synthesize_operator_at_a_time(plan(kmeans_wf, TABLE_STATS), tiled=True)
    assert [s.materialization for s in ep.tuple_stages()] == ["cache-block", "cache-block", "none"]


def test_adaptive_splits_at_vectorizability_boundary(kmeans_wf):
    ep = synthesize_adaptive(plan(kmeans_wf, TABLE_STATS))
    stages = ep.tuple_stages()
    assert _tuple_structure(ep) == [("distance",), ("minimum", "reassign")]
    assert stages[0].mode == "lane-parallel" and stages[0].materialization == "cache-block"
    assert stages[1].mode == "scalar-fused"


def test_adaptive_memory_bound_head_stays_fused(kmeans_wf):
    stats = dict(TABLE_STATS, distance=FunctionStats("distance", "map", True, 2, 3.75, 8))
    ep = synthesize_adaptive(plan(kmeans_wf, stats))
    assert _tuple_structure(ep) == [("distance", "minimum", "reassign")]
    assert ep.structure() == synthesize_pipeline(plan(kmeans_wf, stats)).structure()


def test_adaptive_with_analyzer_stats_matches_table(kmeans_wf):
    ep = synthesize_adaptive(plan(kmeans_wf))
    assert _tuple_structure(ep) == [("distance",), ("minimum", "reassign")]


def test_adaptive_is_deterministic(kmeans_wf):
    a = synthesize_adaptive(plan(kmeans_wf, TABLE_STATS))
    b = synthesize_adaptive(plan(kmeans_wf, TABLE_STATS))
    assert a.to_dict() == b.to_dict()


def test_adaptive_without_lanes_equals_pipeline(kmeans_wf):
    hw = HardwareProfile(lane_width_bits=32)
    ap = plan(kmeans_wf, TABLE_STATS, hw=hw)
    assert synthesize_adaptive(ap, hw).to_dict()["stages"] == synthesize_pipeline(ap, hw).to_dict()["stages"]


def test_no_vectorizable_udfs_keeps_single_pipeline(kmeans_wf):
    stats = dict(TABLE_STATS, distance=FunctionStats("distance", "map", False, 29, 3.75, 8))
    ap = plan(kmeans_wf, stats)
    assert synthesize_adaptive(ap).structure() == synthesize_pipeline(ap).structure()


def test_lane_parallel_stages_only_hold_vectorizable_udfs(kmeans_wf):
    for s in STRATEGIES:
        for st in synthesize(plan(kmeans_wf), s).tuple_stages():
            if st.mode == "lane-parallel":
                assert all(o.stats is not None and o.stats.vectorizable for o in st.ops)


def test_every_operator_in_exactly_one_stage(kmeans_wf):
    ap = plan(kmeans_wf)
    want = [o.id for o in ap.ops if o.kind != "source"]
    for s in STRATEGIES:
        got = [o.id for st in synthesize(ap, s).stages for o in st.ops]
        assert got == want


def test_reduce_lowerings():
    assert synthesize(plan(sum_count_workflow(10))).tuple_stages()[-1].reduce_lowering == "reduction-variable"
    assert synthesize(plan(key_count_workflow(10))).tuple_stages()[-1].reduce_lowering == "direct-index"
    spec = WORKLOADS["kmeans"]
    ep = synthesize(plan(spec.workflow(spec.dataset(rows=20), iters=1)))
    assert ep.tuple_stages()[-1].reduce_lowering == "direct-index"


def test_keyed_reduce_lowers_to_hash_table():
    from tupleflow.corpus import random_workflow

    for seed in range(200):
        case = random_workflow(seed)
        if "reduce(keyed)" in case.description:
            ep = synthesize(plan(case.workflow))
            assert [s.reduce_lowering for s in ep.tuple_stages() if s.reduce is not None] == ["hash-table"]
            return
    pytest.fail("no keyed reduce in the first 200 corpus seeds")


def test_unknown_strategy_rejected(kmeans_wf):
    with pytest.raises(ValueError):
        synthesize(plan(kmeans_wf), "vectorized")


def test_explain_and_json(kmeans_wf):
    ep = synthesize(plan(kmeans_wf), "adaptive")
    assert "lane-parallel" in ep.explain()
    assert '"strategy": "adaptive"' in ep.to_json()
