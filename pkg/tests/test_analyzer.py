from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tupleflow.analyzer import (
    AnalysisError,
    FunctionStats,
    HardwareProfile,
    analyze,
    analyze_vectorizability,
    classify_boundedness,
    compute_load_cycles,
    format_report,
    predict_compute_cycles,
)
from tupleflow.context import F32
from tupleflow.ir import Builder
from tupleflow.workloads import kmeans_udfs

HW = HardwareProfile()
# Predicted column of the k-means function statistics table
PREDICTED = {"distance": 29, "minimum": 17, "reassign": 15, "recompute": 21}
VECTORIZABLE = {"distance": True, "minimum": False, "reassign": False, "recompute": False}


def test_load_cycles_worked_example():
    assert compute_load_cycles(8, HW) == pytest.approx(3.75, abs=0.01)


def test_load_cycles_for_twelve_bytes():
    assert compute_load_cycles(12, HW) == pytest.approx(5.63, abs=0.01)


def test_load_cycles_zero_bytes():
    assert compute_load_cycles(0, HW) == 0.0
    with pytest.raises(ValueError):
        compute_load_cycles(-1, HW)


@settings(max_examples=100)
@given(st.floats(0, 1e6), st.floats(0.1, 100), st.floats(1e8, 1e11))
def test_load_cycles_linear_in_bytes_inverse_in_bandwidth(nbytes, k, bw):
    hw = HW.with_(bandwidth_per_core_bytes_per_s=bw)
    base = compute_load_cycles(nbytes, hw)
    assert compute_load_cycles(nbytes * k, hw) == pytest.approx(base * k, rel=1e-9, abs=1e-12)
    assert compute_load_cycles(nbytes, hw.with_(bandwidth_per_core_bytes_per_s=bw * k)) == pytest.approx(
        base / k, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("name", sorted(PREDICTED))
def test_kmeans_statistics(name):
    s = analyze(kmeans_udfs()[name], HW)
    assert s.vectorizable is VECTORIZABLE[name]
    assert s.predicted_compute_cycles == pytest.approx(PREDICTED[name], rel=0.2)


def test_kmeans_load_cycles():
    u = kmeans_udfs()
    assert analyze(u["distance"]).load_cycles == pytest.approx(3.75, abs=0.01)
    assert analyze(u["minimum"]).load_cycles == pytest.approx(5.63, abs=0.01)
    assert analyze(u["recompute"]).load_cycles == 0.0


def test_distance_is_compute_bound():
    assert analyze(kmeans_udfs()["distance"]).boundedness == "compute-bound"


def test_boundedness_ties_are_memory_bound():
    assert classify_boundedness(FunctionStats("x", "map", True, 2.0, 3.75, 8)) == "memory-bound"
    assert classify_boundedness(FunctionStats("x", "map", True, 3.75, 3.75, 8)) == "memory-bound"


def test_constant_map_is_vectorizable():
    b = Builder("c", "map", in_types=[F32], out_types=[F32])
    b.store(0, b.const(3.0))
    assert analyze_vectorizability(b.build())


def test_empty_body_costs_nothing():
    assert predict_compute_cycles(Builder("e", "update").build(), HW) == 0.0


def test_three_adds_cost_three_cycles():
    b = Builder("a", "map", in_types=[F32], out_types=[F32])
    x = b.field(0)
    b.store(0, b.add(b.add(b.add(x, x), x), x))
    cpi = {k: 0.0 for k in HW.cpi_table}
    cpi["add"] = 1.0
    assert predict_compute_cycles(b.build(), HW.with_(cpi_table=cpi)) == 3.0


def test_missing_cpi_entry_names_opcode():
    cpi = dict(HW.cpi_table)
    del cpi["sqrt"]
    with pytest.raises(AnalysisError, match="sqrt"):
        predict_compute_cycles(kmeans_udfs()["distance"], HW.with_(cpi_table=cpi))


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_vectorizability_monotone_under_removal(data):
    p = kmeans_udfs(attr=3, cent=2)["distance"]
    flat = p.flat
    keep = data.draw(st.lists(st.booleans(), min_size=len(flat), max_size=len(flat)))
    sub = replace(p, body=tuple(i for i, k in zip(flat, keep) if k))
    assert analyze_vectorizability(sub)


def test_report_has_one_row_per_udf():
    u = kmeans_udfs()
    text = format_report(analyze(u[n]) for n in PREDICTED)
    assert len(text.splitlines()) == 2 + len(PREDICTED)
    assert "distance" in text and "yes" in text


def test_profile_validation():
    with pytest.raises(ValueError):
        HardwareProfile(lane_width_bits=48)
    with pytest.raises(ValueError):
        HardwareProfile(clock_hz=0)
