"""The four ML benchmark workflows, their UDFs and seed-deterministic data generators."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .algebra import Workflow
from .context import F32, I32, Context, ContextSpec
from .ir import Builder, UdfProgram
from .relation import Relation, TupleSet

logger = logging.getLogger(__name__)

DEFAULT_STEP = 0.01


def _no_ints(rows: int) -> np.ndarray:
    return np.empty((0, rows), np.int32)


# k-means

def kmeans_context(attr: int, cent: int, init: np.ndarray | None = None) -> Context:
    k = np.zeros((cent, attr), np.float32) if init is None else np.asarray(init, np.float32)
    return Context({
        "k": k,
        "sum": np.zeros((cent, attr), np.float32),
        "ct": np.zeros(cent, np.int32),
        "iter": np.int32(0),
    })


def kmeans_udfs(attr: int = 2, cent: int = 3, iters: int = 20) -> dict[str, UdfProgram]:
    schema = kmeans_context(attr, cent).schema
    f32s = [F32] * attr

    b = Builder("distance", "map", in_types=f32s, out_types=[F32] * (attr + cent), context=schema)
    xs = [b.field(j) for j in range(attr)]
    for j, x in enumerate(xs):
        b.store(j, x)
    with b.loop(cent) as i:
        diffs = [b.sub(b.ctx("k", i, j), xs[j]) for j in range(attr)]
        b.store(i + attr, b.sqrt(b.sum([b.mul(d, d) for d in diffs])))
    distance = b.build()

    b = Builder("minimum", "map", in_types=[F32] * (attr + cent), out_types=f32s + [I32])
    b.copy_fields(attr)
    b.store(attr, b.min_select(*[b.field(attr + i) for i in range(cent)]))
    minimum = b.build()

    b = Builder("reassign", "reduce-body", in_types=f32s + [I32], context=schema)
    assign = b.field(attr)
    with b.loop(attr) as i:
        b.ctx_add("sum", [assign, i], b.field(i))
    b.ctx_inc("ct", assign)
    reassign = b.build()

    b = Builder("recompute", "update", context=schema)
    zf, zi = b.const(0.0), b.const(0)
    with b.loop(cent) as i:
        count = b.to_float(b.ctx("ct", i))
        with b.loop(attr) as j:
            b.ctx_store("k", [i, j], b.div(b.ctx("sum", i, j), count))
            b.ctx_store("sum", [i, j], zf)
        b.ctx_store("ct", [i], zi)
    recompute = b.build()

    iterate = counter_invariant(iters, schema)
    return {"distance": distance, "minimum": minimum, "reassign": reassign,
            "recompute": recompute, "iterate": iterate}


def counter_invariant(limit: int, schema, key: str = "iter", name: str = "iterate") -> UdfProgram:
    b = Builder(name, "invariant", context=schema)
    b.ctx_inc(key)
    b.ret(b.cmp("lt", b.ctx(key), b.const(int(limit))))
    return b.build()


def initial_centroids(data: Relation, cent: int) -> np.ndarray:
    """First ``cent`` distinct points of the dataset.

    With fewer distinct points the available ones are repeated; the duplicate
    centroids then attract no points and their coordinates become NaN.
    """
    pts = np.stack(data.columns, axis=1) if data.columns else np.empty((0, 0), np.float32)
    chosen: list[np.ndarray] = []
    seen: set[bytes] = set()
    for row in pts:
        key = row.tobytes()
        if key not in seen:
            seen.add(key)
            chosen.append(row)
            if len(chosen) == cent:
                break
    if not chosen:
        raise ValueError("k-means needs at least one data point")
    if len(chosen) < cent:
        logger.warning("only %d distinct points for %d centroids; repeating them", len(chosen), cent)
        chosen = [chosen[i % len(chosen)] for i in range(cent)]
    return np.array(chosen, np.float32)


def kmeans_workflow(data: Relation | TupleSet, attr: int = 2, cent: int = 3, iters: int = 20) -> Workflow:
    """distance -> minimum -> reassign -> recompute, looped ``iters`` times."""
    if min(attr, cent, iters) < 1:
        raise ValueError("attr, cent and iters must be >= 1")
    rel = data.relation if isinstance(data, TupleSet) else data
    ts = TupleSet(rel, kmeans_context(attr, cent, initial_centroids(rel, cent)))
    u = kmeans_udfs(attr, cent, iters)
    return (
        ts.map(u["distance"])
        .map(u["minimum"], names=[*rel.names[:attr], "assign"])
        .reduce(u["reassign"])
        .update(u["recompute"])
        .loop(u["iterate"])
    )


def gen_kmeans(rows: int, attr: int = 2, cent: int = 3, seed: int = 0, spread: float = 0.05) -> Relation:
    """Gaussian blobs around ``cent`` well-separated means in the unit cube."""
    rng = np.random.default_rng(seed)
    means = rng.uniform(0.0, 1.0, size=(cent, attr))
    # push means apart so clusters stay well separated
    means = (means + np.arange(cent)[:, None]) / cent
    labels = rng.integers(0, cent, size=rows)
    pts = means[labels] + rng.normal(0.0, spread, size=(rows, attr))
    block = np.ascontiguousarray(pts.T, dtype=np.float32)
    return Relation.from_packed([(f"x{j}", F32) for j in range(attr)], block, _no_ints(rows), rows)


# regressions

def _regression_context(features: int) -> Context:
    return Context({
        "w": np.zeros(features, np.float32),
        "g": np.zeros(features, np.float32),
        "iter": np.int32(0),
    })


def _gradient_udf(name: str, features: int, logistic: bool, schema) -> UdfProgram:
    b = Builder(name, "reduce-body", in_types=[F32] * (features + 1), context=schema)
    # loops stay loops in generated code, so wide feature counts compile quickly
    z = b.sum_range(features, body=lambda j: b.mul(b.ctx("w", j), b.field(j)))
    if logistic:
        one = b.const(1.0)
        z = b.div(one, b.add(one, b.exp(b.sub(b.const(0.0), z))))
    err = b.sub(z, b.field(features))
    with b.loop(features) as j:
        b.ctx_add("g", [j], b.mul(err, b.field(j)))
    return b.build()


def _descent_udf(features: int, step: float, rows: int, schema) -> UdfProgram:
    b = Builder("descend", "update", context=schema)
    rate = b.const(float(step) / max(rows, 1))
    zero = b.const(0.0)
    with b.loop(features) as j:
        w = b.ctx("w", j)
        b.ctx_store("w", [j], b.sub(w, b.mul(rate, b.ctx("g", j))))
        b.ctx_store("g", [j], zero)
    return b.build()


def regression_udfs(features: int, iters: int, step: float, rows: int, logistic: bool) -> dict[str, UdfProgram]:
    schema = _regression_context(features).schema
    return {
        "gradient": _gradient_udf("gradient", features, logistic, schema),
        "descend": _descent_udf(features, step, rows, schema),
        "iterate": counter_invariant(iters, schema),
    }


def _regression_workflow(data, features, iters, step, logistic) -> Workflow:
    if features < 1:
        raise ValueError("features must be >= 1")
    rel = data.relation if isinstance(data, TupleSet) else data
    if rel.arity != features + 1:
        raise ValueError(f"expected {features} feature columns plus a label, got arity {rel.arity}")
    ts = TupleSet(rel, _regression_context(features))
    u = regression_udfs(features, iters, step, rel.cardinality, logistic)
    return ts.reduce(u["gradient"]).update(u["descend"]).loop(u["iterate"])


def logistic_regression_workflow(data, features: int, iters: int = 20, step: float = DEFAULT_STEP) -> Workflow:
    """Batch gradient descent on the mean logistic loss; weights live in Context key 'w'."""
    return _regression_workflow(data, features, iters, step, logistic=True)


def linear_regression_workflow(data, features: int, iters: int = 20, step: float = DEFAULT_STEP) -> Workflow:
    """Batch gradient descent on the mean squared error / 2; weights in Context key 'w'."""
    return _regression_workflow(data, features, iters, step, logistic=False)


def gen_logistic(rows: int, features: int, seed: int = 0, margin: float = 0.1) -> Relation:
    """Linearly separable two-class data; points within ``margin`` of the boundary are pushed out."""
    rng = np.random.default_rng(seed)
    w_true = rng.normal(size=features)
    w_true /= np.linalg.norm(w_true)
    x = rng.normal(size=(rows, features))
    s = x @ w_true
    x += np.outer(np.sign(s + (s == 0)) * margin, w_true)
    y = (x @ w_true > 0).astype(np.float32)
    block = np.vstack([x.T.astype(np.float32), y[None, :]])
    schema = [(f"x{j}", F32) for j in range(features)] + [("y", F32)]
    return Relation.from_packed(schema, block, _no_ints(rows), rows)


def gen_linear(rows: int, features: int, seed: int = 0, noise: float = 0.0, weights=None) -> Relation:
    rng = np.random.default_rng(seed)
    w_true = rng.normal(size=features) if weights is None else np.asarray(weights, float)
    x = rng.uniform(0.0, 1.0, size=(rows, features))
    y = x @ w_true + rng.normal(0.0, noise, size=rows) if noise else x @ w_true
    block = np.vstack([x.T.astype(np.float32), y.astype(np.float32)[None, :]])
    schema = [(f"x{j}", F32) for j in range(features)] + [("y", F32)]
    return Relation.from_packed(schema, block, _no_ints(rows), rows)


def logistic_loss(w: np.ndarray, rel: Relation) -> float:
    x = np.stack(rel.columns[:-1], axis=1).astype(np.float64)
    y = rel.columns[-1].astype(np.float64)
    z = x @ w
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def squared_loss(w: np.ndarray, rel: Relation) -> float:
    x = np.stack(rel.columns[:-1], axis=1).astype(np.float64)
    y = rel.columns[-1].astype(np.float64)
    return float(np.mean((x @ w - y) ** 2) / 2)


# naive Bayes

def naive_bayes_context(features: int, labels: int, bins: int) -> Context:
    return Context({
        "label_ct": np.zeros(labels, np.int32),
        "feat_ct": np.zeros((features, bins, labels), np.int32),
        "total": np.int32(0),
        "log_prior": np.zeros(labels, np.float32),
        "log_lik": np.zeros((features, bins, labels), np.float32),
    })


def naive_bayes_udfs(features: int, labels: int, bins: int) -> dict[str, UdfProgram]:
    schema = naive_bayes_context(features, labels, bins).schema

    b = Builder("count", "reduce-body", in_types=[I32] * (features + 1), context=schema)
    label = b.field(features)
    b.ctx_inc("label_ct", label)
    with b.loop(features) as f:
        b.ctx_inc("feat_ct", f, b.field(f), label)
    count = b.build()

    b = Builder("normalize", "update", context=schema)
    one = b.const(1.0)
    b.ctx_store("total", [], b.const(0))
    with b.loop(labels) as lab:
        b.ctx_add("total", [], b.ctx("label_ct", lab))
    log_total = b.log(b.add(b.to_float(b.ctx("total")), b.const(float(labels))))
    nbins = b.const(float(bins))
    with b.loop(labels) as lab:
        n_l = b.to_float(b.ctx("label_ct", lab))
        b.ctx_store("log_prior", [lab], b.sub(b.log(b.add(n_l, one)), log_total))
        denom = b.log(b.add(n_l, nbins))
        with b.loop(features) as f:
            with b.loop(bins) as k:
                c = b.to_float(b.ctx("feat_ct", f, k, lab))
                b.ctx_store("log_lik", [f, k, lab], b.sub(b.log(b.add(c, one)), denom))
    normalize = b.build()
    return {"count": count, "normalize": normalize}


def naive_bayes_workflow(data, features: int, labels: int, bins: int = 4) -> Workflow:
    """Single reduce counting label and (feature, bin, label) occurrences, then log-normalize."""
    rel = data.relation if isinstance(data, TupleSet) else data
    if rel.arity != features + 1:
        raise ValueError(f"expected {features} binned features plus a label, got arity {rel.arity}")
    ts = TupleSet(rel, naive_bayes_context(features, labels, bins))
    u = naive_bayes_udfs(features, labels, bins)
    return ts.reduce(u["count"]).update(u["normalize"])


_NB_CHUNK = 8192


def gen_naive_bayes(rows: int, features: int, labels: int, bins: int = 4, seed: int = 0) -> Relation:
    """Pre-binned categorical features whose distribution depends on the label."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, labels, size=rows)
    cum = rng.dirichlet(np.ones(bins), size=(labels, features)).cumsum(axis=-1)
    x = np.empty((rows, features), np.int32)
    for lo in range(0, rows, _NB_CHUNK):
        hi = min(rows, lo + _NB_CHUNK)
        u = rng.random(size=(hi - lo, features))
        x[lo:hi] = (u[:, :, None] > cum[y[lo:hi]]).sum(axis=-1).clip(0, bins - 1)
    block = np.vstack([x.T.astype(np.int32), y.astype(np.int32)[None, :]])
    schema = [(f"f{j}", I32) for j in range(features)] + [("label", I32)]
    return Relation.from_packed(schema, np.empty((0, rows), np.float32), block, rows)


# registry used by the CLI and the acceptance corpus

@dataclass
class WorkloadSpec:
    name: str
    generate: Callable[..., Relation]
    build: Callable[..., Workflow]
    params: dict = field(default_factory=dict)
    iterations: int = 1

    def dataset(self, rows: int | None = None, seed: int = 0, **overrides) -> Relation:
        p = {**self.params, **overrides}
        gen_kw = {k: v for k, v in p.items() if k in _GEN_KEYS[self.name]}
        return self.generate(rows or p["rows"], seed=seed, **gen_kw)

    def workflow(self, data: Relation, **overrides) -> Workflow:
        p = {**self.params, **overrides}
        build_kw = {k: v for k, v in p.items() if k in _BUILD_KEYS[self.name]}
        return self.build(data, **build_kw)


_GEN_KEYS = {
    "kmeans": {"attr", "cent"},
    "logreg": {"features"},
    "linreg": {"features"},
    "naive_bayes": {"features", "labels", "bins"},
}
_BUILD_KEYS = {
    "kmeans": {"attr", "cent", "iters"},
    "logreg": {"features", "iters", "step"},
    "linreg": {"features", "iters", "step"},
    "naive_bayes": {"features", "labels", "bins"},
}

KMEANS_ROWS_70MB = 70_000_000 // (4 * 2)
# 10^6 rows x 1024 features would be 4 GB of float32; the regressions default to 10^5 rows
REGRESSION_ROWS = 100_000

WORKLOADS: dict[str, WorkloadSpec] = {
    "kmeans": WorkloadSpec("kmeans", gen_kmeans, kmeans_workflow,
                           {"rows": KMEANS_ROWS_70MB, "attr": 2, "cent": 3, "iters": 20}, 20),
    "logreg": WorkloadSpec("logreg", gen_logistic, logistic_regression_workflow,
                           {"rows": REGRESSION_ROWS, "features": 1024, "iters": 20, "step": DEFAULT_STEP}, 20),
    "linreg": WorkloadSpec("linreg", gen_linear, linear_regression_workflow,
                           {"rows": REGRESSION_ROWS, "features": 1024, "iters": 20, "step": DEFAULT_STEP}, 20),
    "naive_bayes": WorkloadSpec("naive_bayes", gen_naive_bayes, naive_bayes_workflow,
                                {"rows": 1_000_000, "features": 128, "labels": 10, "bins": 4}, 1),
}
