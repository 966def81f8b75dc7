import json

import pytest

from tupleflow.cli import main
from tupleflow.io import read_csv
from tupleflow.workloads import WORKLOADS

FAST = ["--backend", "python", "--threads", "2"]
REPORT_KEYS = {"workload", "strategy", "workers", "wall_ms", "stages", "checksums"}


def _run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr()


def _tuple_stages_in_loop(doc):
    return [s for s in doc["stages"] if s["role"] == "tuple" and s["in_loop"]]


def test_run_adaptive_has_two_stages_per_iteration(tmp_path, capsys):
    out = tmp_path / "r.json"
    code, _ = _run(["run", "kmeans", "--rows", "2000", "--iters", "3", "--strategy", "adaptive", *FAST,
                    "--json", str(out)], capsys)
    assert code == 0
    doc = json.loads(out.read_text())
    assert REPORT_KEYS <= set(doc)
    assert [s["ops"] for s in _tuple_stages_in_loop(doc)] == [["distance"], ["minimum", "reassign"]]


def test_run_pipeline_has_one_fused_stage(tmp_path, capsys):
    out = tmp_path / "r.json"
    code, _ = _run(["run", "kmeans", "--rows", "2000", "--iters", "3", "--strategy", "pipeline",
                    "--backend", "python", "--threads", "1", "--json", str(out)], capsys)
    assert code == 0
    stages = _tuple_stages_in_loop(json.loads(out.read_text()))
    assert [s["ops"] for s in stages] == [["distance", "minimum", "reassign"]]


def test_same_seed_same_checksums(tmp_path, capsys):
    docs = []
    for k in range(2):
        out = tmp_path / f"r{k}.json"
        assert main(["run", "linreg", "--rows", "500", "--features", "4", "--iters", "2", *FAST,
                     "--seed", "5", "--json", str(out)]) == 0
        docs.append(json.loads(out.read_text()))
    assert docs[0]["checksums"] == docs[1]["checksums"]


def test_unknown_workload_is_usage_error(capsys):
    code, io = _run(["run", "pagerank"], capsys)
    assert code == 2


def test_unknown_strategy_is_usage_error(capsys):
    code, _ = _run(["run", "kmeans", "--strategy", "vectorized"], capsys)
    assert code == 2


def test_bad_config_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[topology]\nracks = 1\n")
    code, io = _run(["--config", str(cfg), "run", "kmeans", "--rows", "10"], capsys)
    assert code == 2 and "racks" in io.err


def test_gen_writes_csv(tmp_path, capsys):
    out = tmp_path / "k.csv"
    code, _ = _run(["gen", "kmeans", "--rows", "100", "--seed", "3", "--out", str(out)], capsys)
    assert code == 0
    spec = WORKLOADS["kmeans"]
    assert read_csv(out, spec.dataset(rows=100, seed=3).schema).equals(spec.dataset(rows=100, seed=3))


def test_analyze_workload_table(capsys):
    code, io = _run(["analyze", "kmeans", "--json", "-"], capsys)
    assert code == 0
    rows = json.loads(io.out[io.out.index("["):])
    assert [r["vectorizable"] for r in rows[:4]] == [True, False, False, False]


def test_analyze_ir_file(tmp_path, capsys):
    path = tmp_path / "f.ir"
    path.write_text("udf twice map\nin f32\nout f32\n  %0 = load-field 0\n  %1 = add %0 %0\n  store-field 0 %1\n")
    code, io = _run(["analyze", str(path)], capsys)
    assert code == 0 and "twice" in io.out


def test_analyze_missing_source(capsys):
    assert _run(["analyze", "/nonexistent/file.ir"], capsys)[0] == 2


def test_analyze_syntax_error(tmp_path, capsys):
    path = tmp_path / "bad.ir"
    path.write_text("udf x map\nin f32\nout f32\n  %0 = nonsense\n")
    assert _run(["analyze", str(path)], capsys)[0] == 2


def test_plan_explain(capsys):
    code, io = _run(["plan", "kmeans", "--rows", "100", "--explain"], capsys)
    assert code == 0
    assert "[breaker]" in io.out and "lane-parallel" in io.out


def test_bench_strategies_cross_checks(capsys):
    code, io = _run(["bench-strategies", "kmeans", "--rows", "1", "--iters", "2", "--repeats", "1", *FAST],
                    capsys)
    assert code == 0 and "results agree" in io.out


def test_bench_reduce_json(capsys):
    code, io = _run(["bench-reduce", "--sizes", "1", "--repeats", "1", *FAST, "--json", "-"], capsys)
    assert code == 0
    doc = json.loads(io.out[io.out.index("{"):])
    assert {p["benchmark"] for p in doc["series"]} == {"reduction-variable", "direct-index"}


def test_scale_reports_baseline(capsys):
    code, io = _run(["scale", "--workers", "1,2", "--rows-per-worker", "2000", "--iters", "1", "--repeats", "1",
                     "--backend", "python", "--json", "-"], capsys)
    assert code == 0
    doc = json.loads(io.out[io.out.index("{"):])
    assert [p["workers"] for p in doc["series"]] == [1, 2]
    assert doc["series"][0]["rows"] == 2000 and doc["series"][1]["rows"] == 4000
    assert doc["ratio"] >= 1.0


@pytest.mark.parametrize("workers", ["0", "a,b", ""])
def test_scale_rejects_bad_worker_lists(workers, capsys):
    assert _run(["scale", "--workers", workers], capsys)[0] == 2
