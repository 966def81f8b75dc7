"""Applying per-executor update sets to a Context."""

from __future__ import annotations

from typing import Sequence

from ..context import Context, UpdateSet, merge_deltas


def apply_update_sets(c: Context, sets: Sequence[UpdateSet]) -> Context:
    """New Context with ``sets`` folded in, in the given (node, executor) order.

    Deltas accumulate in float64/int64 and are rounded into the stored
    float32/int32 values once, so the result does not depend on how rows were
    split among executors beyond float64 summation order.
    """
    out = c.copy()
    schema = out.schema
    for key, acc in merge_deltas(sets, schema).items():
        cur = out[key]
        out[key] = (cur.astype(acc.dtype) + acc).astype(cur.dtype)
    return out
