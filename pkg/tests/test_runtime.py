import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tupleflow.algebra import Workflow
from tupleflow.context import F32
from tupleflow.engine import Engine
from tupleflow.ir import Builder
from tupleflow.relation import Relation, TupleSet
from tupleflow.runtime import (
    ExecutionError,
    MemoryPool,
    SlowdownHook,
    TierTopology,
    form_units,
    partition,
    schedule,
)
from tupleflow.synth import synthesize
from tupleflow.planner import plan
from tupleflow.workloads import WORKLOADS


@settings(max_examples=100)
@given(st.integers(0, 5000), st.integers(1, 64), st.integers(1, 4096), st.integers(0, 100))
def test_partition_is_disjoint_covering_in_order(rows, row_bytes, block_bytes, start):
    blocks = partition(0, rows, row_bytes, block_bytes, start)
    assert sum(b.rows for b in blocks) == rows
    pos = start
    for b in blocks:
        assert b.start == pos and b.end > b.start
        pos = b.end


@pytest.mark.parametrize("nodes,workers", [(1, 1), (1, 4), (2, 3)])
def test_schedule_processes_every_row_once(nodes, workers):
    topo = TierTopology(nodes, workers, gm_block_bytes=4096, exec_block_bytes=256)
    seen = np.zeros(10_000, np.int32)
    lock = threading.Lock()

    def work(idx, block):
        with lock:
            seen[block.start:block.end] += 1

    res = schedule(0, len(seen), 8, topo, work)
    assert np.all(seen == 1)
    assert res.rows == len(seen)
    assert len(res.executors) == nodes * workers


def test_executor_failure_aborts_job():
    def work(idx, block):
        if block.start >= 512:
            raise RuntimeError("boom")

    with pytest.raises(ExecutionError, match="boom"):
        schedule(0, 10_000, 8, TierTopology(1, 2, 4096, 256), work)


def test_pull_balancing_with_slow_executor():
    """A 4x-slow executor takes fewer blocks and everyone finishes close together."""
    topo = TierTopology(1, 4, gm_block_bytes=1 << 14, exec_block_bytes=1 << 10)
    hook = SlowdownHook({(0, 0): 4.0}, block_cost_s=0.002)
    res = schedule(0, 200_000, 8, topo, lambda i, b: None, hook)
    blocks = [e.blocks for e in res.executors]
    assert blocks[0] < min(blocks[1:])
    finish = [e.busy_s for e in res.executors]
    assert max(finish) - min(finish) <= 0.1 * res.wall_s + 0.01


def test_pool_reuses_released_buffer():
    pool = MemoryPool()
    a = pool.alloc(100, np.float32)
    pool.release(a)
    b = pool.alloc(100, np.float32)
    assert pool.stats.hits == 1
    assert np.shares_memory(a, b)


def test_pool_spills_instead_of_failing(caplog):
    pool = MemoryPool(cap_bytes=1024)
    pool.alloc(200, np.float32)
    x = pool.alloc(200, np.float32)
    assert pool.stats.spills == 1 and x.shape == (200,)
    assert "exhausted" in caplog.text


def _map(name):
    b = Builder(name, "map", in_types=[F32, F32], out_types=[F32, F32])
    b.store(0, b.add(b.field(0), b.field(1)))
    b.store(1, b.field(1))
    return b.build()


def test_dead_input_map_runs_in_place():
    rel = Relation.from_columns([("a", F32), ("b", F32)], [np.ones(1000, np.float32)] * 2)
    counts = []
    for k in (1, 3):
        wf = Workflow.source(TupleSet(rel))
        for i in range(k):
            wf = wf.map(_map(f"m{i}"))
        pool = MemoryPool()
        out = Engine(backend="python", pool=pool).evaluate(wf, "operator")
        assert out.relation.columns[0][0] == 1 + k
        counts.append(pool.stats.allocations)
    assert counts[0] == counts[1]


def test_allocations_constant_across_iterations():
    spec = WORKLOADS["kmeans"]
    data = spec.dataset(rows=5000)
    counts = []
    for iters in (2, 6):
        pool = MemoryPool()
        Engine(backend="python", pool=pool).run(spec.workflow(data, iters=iters), "pipeline")
        counts.append(pool.stats.allocations)
    assert counts[0] == counts[1]


def test_cache_block_stages_form_one_pass():
    spec = WORKLOADS["kmeans"]
    ep = synthesize(plan(spec.workflow(spec.dataset(rows=100), iters=1)), "adaptive")
    kinds = [(u.kind, len(u.stages)) for u in form_units(ep)]
    assert kinds[0] == ("pass", 2)


def test_topology_validation():
    with pytest.raises(ValueError):
        TierTopology(gm_block_bytes=10, exec_block_bytes=20)
    with pytest.raises(ValueError):
        TierTopology(executors_per_node=0)
