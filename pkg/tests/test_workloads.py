"""Workload oracles: numpy reimplementations, analytic fixed points and hand counts."""

import numpy as np
import pytest

from conftest import small_topology
from tupleflow.engine import Engine
from tupleflow.reference import reference_evaluate
from tupleflow.relation import Relation
from tupleflow.report import results_match
from tupleflow.context import I32
from tupleflow.workloads import (
    WORKLOADS,
    gen_kmeans,
    gen_linear,
    gen_logistic,
    initial_centroids,
    kmeans_workflow,
    linear_regression_workflow,
    logistic_loss,
    logistic_regression_workflow,
    naive_bayes_workflow,
    squared_loss,
)


def numpy_kmeans(rel: Relation, cent: int, iters: int) -> np.ndarray:
    x = np.stack(rel.columns, axis=1).astype(np.float64)
    k = initial_centroids(rel, cent).astype(np.float64)
    for _ in range(iters):
        d = np.sqrt(((x[:, None, :] - k[None, :, :]) ** 2).sum(-1))
        a = d.argmin(1)
        k = np.stack([x[a == c].mean(0) for c in range(cent)])
    return k


def test_kmeans_matches_numpy(py_engine):
    rel = gen_kmeans(3000, seed=3)
    out = py_engine.evaluate(kmeans_workflow(rel), "adaptive")
    np.testing.assert_allclose(out.context["k"], numpy_kmeans(rel, 3, 20), atol=1e-3)
    assert int(out.context["iter"]) == 20


def test_kmeans_single_centroid_is_mean(py_engine):
    rel = gen_kmeans(500, cent=1, seed=1)
    out = py_engine.evaluate(kmeans_workflow(rel, cent=1, iters=1))
    mean = np.stack(rel.columns, axis=1).astype(np.float64).mean(0)
    np.testing.assert_allclose(out.context["k"][0], mean, rtol=1e-5)


def test_kmeans_output_arity_and_context_keys():
    rel = gen_kmeans(10)
    wf = kmeans_workflow(rel)
    distance = wf.node.inputs[0].inputs[0].inputs[0].inputs[0]
    assert distance.kind == "map" and len(distance.types) == 5
    assert set(wf.context_schema) == {"k", "sum", "ct", "iter"}


def test_generators_are_seed_deterministic():
    for name, spec in WORKLOADS.items():
        kw = {"features": 4} if name != "kmeans" else {}
        a, b = spec.dataset(rows=50, seed=7, **kw), spec.dataset(rows=50, seed=7, **kw)
        assert a.equals(b)
        assert not a.equals(spec.dataset(rows=50, seed=8, **kw))


def test_logistic_regression_separates(py_engine):
    rel = gen_logistic(2000, 2, seed=0)
    w = py_engine.evaluate(logistic_regression_workflow(rel, 2, iters=20, step=1.0)).context["w"]
    x = np.stack(rel.columns[:2], axis=1)
    acc = np.mean((x @ w > 0) == (rel.columns[2] > 0.5))
    assert acc >= 0.99


def test_zero_step_leaves_weights(py_engine):
    rel = gen_logistic(200, 3)
    w = py_engine.evaluate(logistic_regression_workflow(rel, 3, iters=3, step=0.0)).context["w"]
    assert np.all(w == 0)


def _fd_gradient(loss, rel, features, h=1e-4):
    g = np.zeros(features)
    for j in range(features):
        e = np.zeros(features)
        e[j] = h
        g[j] = (loss(e, rel) - loss(-e, rel)) / (2 * h)
    return g


@pytest.mark.parametrize("logistic", [True, False])
def test_gradient_matches_finite_differences(py_engine, logistic):
    features, step = 4, 0.5
    if logistic:
        rel, build, loss = gen_logistic(1000, features, seed=2), logistic_regression_workflow, logistic_loss
    else:
        rel, build, loss = gen_linear(1000, features, seed=2), linear_regression_workflow, squared_loss
    w1 = py_engine.evaluate(build(rel, features, iters=1, step=step)).context["w"].astype(np.float64)
    np.testing.assert_allclose(-w1 / step, _fd_gradient(loss, rel, features), rtol=1e-3, atol=1e-6)


def test_linear_regression_fixed_point(py_engine):
    rel = gen_linear(1000, 1, weights=[2.0])
    w = py_engine.evaluate(linear_regression_workflow(rel, 1, iters=60, step=1.0)).context["w"]
    assert float(w[0]) == pytest.approx(2.0, abs=1e-3)


NB_ROWS = [(0, 0), (1, 0), (1, 0), (0, 1), (0, 1), (1, 1)]  # (feature, label)


def _nb_table():
    cols = [np.array([r[0] for r in NB_ROWS], np.int32), np.array([r[1] for r in NB_ROWS], np.int32)]
    return Relation.from_columns([("f0", I32), ("label", I32)], cols)


@pytest.mark.parametrize("strategy", ["pipeline", "adaptive"])
def test_naive_bayes_hand_counts(py_engine, strategy):
    out = py_engine.evaluate(naive_bayes_workflow(_nb_table(), 1, 2, bins=2), strategy)
    assert out.context["label_ct"].tolist() == [3, 3]
    # feat_ct[feature, bin, label]
    assert out.context["feat_ct"][0].tolist() == [[1, 2], [2, 1]]
    assert int(out.context["total"]) == 6
    np.testing.assert_allclose(out.context["log_prior"], np.log([4 / 8, 4 / 8]), rtol=1e-6)


def test_naive_bayes_counts_match_sequential_oracle(py_engine):
    spec = WORKLOADS["naive_bayes"]
    rel = spec.dataset(rows=3000, features=6, labels=3, bins=4)
    out = py_engine.evaluate(spec.workflow(rel, features=6, labels=3, bins=4))
    want = np.zeros((6, 4, 3), np.int64)
    y = rel.columns[-1]
    for f in range(6):
        np.add.at(want[f], (rel.columns[f], y), 1)
    assert np.array_equal(out.context["feat_ct"], want)
    assert np.array_equal(out.context["label_ct"], np.bincount(y, minlength=3))


def test_naive_bayes_direct_index_equals_hash_table():
    spec = WORKLOADS["naive_bayes"]
    wf = spec.workflow(spec.dataset(rows=2000, features=5, labels=4), features=5, labels=4)
    e = Engine(backend="python", topology=small_topology(2))
    a = e.run(wf, "adaptive", force_lowering="direct-index")
    b = e.run(wf, "adaptive", force_lowering="hash-table")
    assert a.plan.tuple_stages()[-1].reduce_lowering == "direct-index"
    assert b.plan.tuple_stages()[-1].reduce_lowering == "hash-table"
    assert np.array_equal(a.result.context["feat_ct"], b.result.context["feat_ct"])
    assert results_match(a.result, b.result, 1e-6)


@pytest.mark.parametrize("name", sorted(WORKLOADS))
def test_workloads_match_reference(name, py_engine):
    spec = WORKLOADS[name]
    kw = {"kmeans": {"iters": 3}}.get(name, {"features": 6, "iters": 3})
    data = spec.dataset(rows=400, **kw)
    wf = spec.workflow(data, **kw)
    assert results_match(py_engine.evaluate(wf, "adaptive"), reference_evaluate(wf), 1e-5)
