"""Seeded random UDFs and workflows for differential testing against the reference interpreter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import Workflow
from .context import F32, I32, Context
from .ir import Builder, UdfProgram, V
from .ir.program import CMP_PREDICATES
from .relation import Relation, TupleSet

CTX_SLOTS = 4


def random_context() -> Context:
    return Context({
        "scale": np.float32(0.5),
        "s": np.zeros(CTX_SLOTS, np.float32),
        "c": np.zeros(CTX_SLOTS, np.int32),
        "it": np.int32(0),
    })


def random_relation(rng: np.random.Generator, rows: int, types: list[str]) -> Relation:
    cols = []
    for t in types:
        if t == F32:
            cols.append(np.round(rng.normal(0.0, 4.0, rows), 2).astype(np.float32))
        else:
            cols.append(rng.integers(-20, 21, rows).astype(np.int32))
    return Relation.from_columns([(f"c{j}", t) for j, t in enumerate(types)], cols, rows)


class _Gen:
    """Expression generator over the fields of one Builder."""

    def __init__(self, rng: np.random.Generator, b: Builder, in_types, use_ctx: bool):
        self.rng = rng
        self.b = b
        self.in_types = list(in_types)
        self.use_ctx = use_ctx

    def _pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def f32(self, depth: int = 2) -> V:
        b, rng = self.b, self.rng
        choice = rng.integers(6 if depth > 0 else 2)
        if choice == 0 or not self.in_types:
            return b.const(float(np.round(rng.uniform(-3, 3), 2)))
        if choice == 1:
            j = int(rng.integers(len(self.in_types)))
            x = b.field(j)
            return x if self.in_types[j] == F32 else b.to_float(x)
        if choice == 2:
            return b.add(self.f32(depth - 1), self.f32(depth - 1))
        if choice == 3:
            return b.sub(self.f32(depth - 1), self.f32(depth - 1))
        if choice == 4:
            x = self.f32(depth - 1)
            if self.use_ctx and rng.random() < 0.5:
                return b.mul(x, b.ctx("scale"))
            return b.mul(x, b.const(float(np.round(rng.uniform(-2, 2), 2))))
        x = self.f32(depth - 1)
        return b.sqrt(b.add(b.mul(x, x), b.const(1.0)))

    def i32(self, depth: int = 1) -> V:
        b, rng = self.b, self.rng
        ints = [j for j, t in enumerate(self.in_types) if t == I32]
        choice = rng.integers(4)
        if choice == 0 and ints:
            return b.add(b.field(self._pick(ints)), b.const(int(rng.integers(-5, 6))))
        if choice == 1:
            return self.slot()
        if choice == 2 and ints:
            return b.select(self.cond(), b.field(self._pick(ints)), b.const(int(rng.integers(-5, 6))))
        return b.const(int(rng.integers(-5, 6)))

    def slot(self) -> V:
        """An i32 in [0, CTX_SLOTS): argmin over derived floats."""
        return self.b.min_select(*[self.f32(1) for _ in range(CTX_SLOTS)])

    def cond(self) -> V:
        return self.b.cmp(self._pick(CMP_PREDICATES), self.f32(1), self.f32(0))


def random_map(rng, name: str, in_types, use_ctx: bool = True, kind: str = "map") -> UdfProgram:
    ctx = random_context() if use_ctx else None
    out_types = [F32 if rng.random() < 0.6 else I32 for _ in range(int(rng.integers(1, 5)))]
    b = Builder(name, kind, in_types=in_types, out_types=out_types, context=ctx)
    g = _Gen(rng, b, in_types, use_ctx)
    for j, t in enumerate(out_types):
        b.store(j, g.f32() if t == F32 else g.i32())
    return b.build()


def random_projection(rng, name: str, in_types) -> tuple[UdfProgram, list[int]]:
    keep = sorted(rng.choice(len(in_types), size=int(rng.integers(1, len(in_types) + 1)), replace=False).tolist())
    b = Builder(name, "map", in_types=in_types, out_types=[in_types[j] for j in keep])
    for k, j in enumerate(keep):
        b.store(k, b.field(j))
    return b.build(), keep


def random_predicate(rng, name: str, in_types, use_ctx: bool = True) -> UdfProgram:
    b = Builder(name, "predicate", in_types=in_types, context=random_context() if use_ctx else None)
    b.ret(_Gen(rng, b, in_types, use_ctx).cond())
    return b.build()


def random_flatmap(rng, name: str, in_types) -> UdfProgram:
    b = Builder(name, "flatmap", in_types=in_types, out_types=in_types, context=random_context())
    g = _Gen(rng, b, in_types, True)
    b.copy_fields(len(in_types))
    b.emit(g.cond() if rng.random() < 0.7 else None)
    if rng.random() < 0.6:
        b.store(0, g.f32() if in_types[0] == F32 else g.i32())
        b.emit(g.cond() if rng.random() < 0.5 else None)
    return b.build()


def random_reduce(rng, name: str, in_types) -> UdfProgram:
    agg = [F32, I32][: int(rng.integers(0, 3))]
    b = Builder(name, "reduce-body", in_types=in_types, agg_types=agg, context=random_context())
    g = _Gen(rng, b, in_types, True)
    for slot, t in enumerate(agg):
        b.agg(slot, g.f32() if t == F32 else b.const(1))
    if not agg or rng.random() < 0.7:
        b.ctx_add("s", [g.slot()], g.f32())
        b.ctx_inc("c", g.slot())
    return b.build()


def random_key(rng, name: str, in_types) -> UdfProgram:
    b = Builder(name, "key", in_types=in_types)
    b.ret_key(_Gen(rng, b, in_types, False).i32())
    return b.build()


def random_update(name: str) -> UdfProgram:
    b = Builder(name, "update", context=random_context())
    half = b.const(0.5)
    with b.loop(CTX_SLOTS) as j:
        b.ctx_store("s", [j], b.mul(b.ctx("s", j), half))
        b.ctx_add("c", [j], b.const(1))
    return b.build()


def random_invariant(name: str, limit: int) -> UdfProgram:
    b = Builder(name, "invariant", context=random_context())
    b.ctx_inc("it")
    b.ret(b.cmp("lt", b.ctx("it"), b.const(int(limit))))
    return b.build()


@dataclass
class RandomCase:
    seed: int
    workflow: Workflow
    description: str


def random_workflow(seed: int, max_ops: int = 6, max_rows: int = 1000) -> RandomCase:
    """A chain of at most ``max_ops`` operators over a random relation of at most ``max_rows`` rows."""
    rng = np.random.default_rng(seed)
    types = [F32 if rng.random() < 0.6 else I32 for _ in range(int(rng.integers(1, 5)))]
    rows = int(rng.integers(0, max_rows + 1)) if rng.random() < 0.2 else int(rng.integers(0, min(200, max_rows) + 1))
    wf = Workflow.source(TupleSet(random_relation(rng, rows, types), random_context()))
    n_ops = int(rng.integers(1, max_ops + 1))
    tail = [] if n_ops < 2 or rng.random() < 0.3 else ["reduce"]
    if tail and n_ops >= 3 and rng.random() < 0.5:
        tail.append("update")
    if len(tail) == 2 and n_ops >= 4 and rng.random() < 0.5:
        tail.append("loop")
    ops = []
    for k in range(n_ops - len(tail)):
        cur = [t for _, t in wf.schema]
        kind = ["map", "filter", "flatmap", "projection", "selection", "rename"][int(rng.integers(6))]
        name = f"{kind}{k}"
        if kind == "map":
            wf = wf.map(random_map(rng, name, cur))
        elif kind == "filter":
            wf = wf.filter(random_predicate(rng, name, cur))
        elif kind == "flatmap":
            wf = wf.flatmap(random_flatmap(rng, name, cur))
        elif kind == "projection":
            f, keep = random_projection(rng, name, cur)
            wf = wf.projection(f, names=[wf.schema[j][0] for j in keep])
        elif kind == "selection":
            wf = wf.selection(random_predicate(rng, name, cur, use_ctx=False))
        else:
            order = rng.permutation(len(cur)).tolist()
            wf = wf.rename([f"r{k}_{j}" for j in range(len(cur))], order)
        ops.append(kind)
    cur = [t for _, t in wf.schema]
    if "reduce" in tail:
        key = random_key(rng, "key", cur) if rng.random() < 0.4 else None
        wf = wf.reduce(random_reduce(rng, "agg", cur), key=key)
        ops.append("reduce" + ("(keyed)" if key is not None else ""))
    if "update" in tail:
        wf = wf.update(random_update("halve"))
        ops.append("update")
    if "loop" in tail:
        wf = wf.loop(random_invariant("again", int(rng.integers(1, 4))))
        ops.append("loop")
    return RandomCase(seed, wf, f"seed={seed} rows={rows} types={types} ops={ops}")


__all__ = [
    "CTX_SLOTS", "RandomCase", "random_context", "random_flatmap", "random_key", "random_map",
    "random_predicate", "random_reduce", "random_relation", "random_update", "random_workflow",
]
