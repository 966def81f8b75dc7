"""Result comparison and stable checksums used by the CLI and the test suite."""

from __future__ import annotations

import numpy as np

from .context import Context
from .relation import Relation, TupleSet


def _close(a: np.ndarray, b: np.ndarray, rtol: float) -> bool:
    if a.shape != b.shape or a.dtype != b.dtype:
        return False
    if a.dtype.kind in "iub":
        return bool(np.array_equal(a, b))
    a64, b64 = a.astype(np.float64), b.astype(np.float64)
    scale = max(1.0, float(np.max(np.abs(b64)))) if b64.size else 1.0
    return bool(np.allclose(a64, b64, rtol=rtol, atol=rtol * scale, equal_nan=True))


def contexts_match(a: Context, b: Context, rtol: float = 1e-5, rtol_keys: dict[str, float] | None = None) -> bool:
    if set(a.keys()) != set(b.keys()):
        return False
    rtol_keys = rtol_keys or {}
    return all(_close(a[k], b[k], rtol_keys.get(k, rtol)) for k in a.keys())


def relations_match(a: Relation, b: Relation, rtol: float = 1e-5) -> bool:
    if a.types != b.types or a.cardinality != b.cardinality:
        return False
    return all(_close(x, y, rtol) for x, y in zip(a.columns, b.columns))


def results_match(a: TupleSet, b: TupleSet, rtol: float = 1e-5, rtol_keys: dict[str, float] | None = None) -> bool:
    """Integers exactly, floats within ``rtol`` relative (scaled by the larger magnitude)."""
    return relations_match(a.relation, b.relation, rtol) and contexts_match(a.context, b.context, rtol, rtol_keys)


def mismatch_report(a: TupleSet, b: TupleSet, rtol: float = 1e-5) -> list[str]:
    out = []
    if a.relation.cardinality != b.relation.cardinality:
        out.append(f"relation rows {a.relation.cardinality} vs {b.relation.cardinality}")
    else:
        for name, x, y in zip(a.relation.names, a.relation.columns, b.relation.columns):
            if not _close(x, y, rtol):
                out.append(f"column {name}: max abs diff {np.max(np.abs(x.astype(float) - y.astype(float))):.3g}")
    for k in a.context.keys():
        if k in b.context and not _close(a.context[k], b.context[k], rtol):
            d = np.max(np.abs(a.context[k].astype(float) - b.context[k].astype(float)))
            out.append(f"context {k}: max abs diff {d:.3g}")
    return out


def checksums(ts: TupleSet) -> dict[str, float | int]:
    """Per-column and per-context-key sums (float64 for floats, exact for integers) plus the row count."""
    out: dict[str, float | int] = {"rows": ts.relation.cardinality}
    for name, col in zip(ts.relation.names, ts.relation.columns):
        out[f"col:{name}"] = _sum(col)
    for k, v in ts.context.items():
        out[f"ctx:{k}"] = _sum(v)
    return out


def _sum(a: np.ndarray) -> float | int:
    if a.dtype.kind in "iub":
        return int(a.astype(np.int64).sum())
    return float(np.round(a.astype(np.float64).sum(), 6))
