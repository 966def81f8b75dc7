"""Run an ExecutionPlan: passes over blocks, barriers at breakers, loops and relational operators."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ..analyzer import HardwareProfile
from ..context import ACC_DTYPE, F32, NUMPY_DTYPE, Context
from ..ir import interpret
from ..relation import Relation, TupleSet
from ..synth.codegen import ChainOp, count_types
from ..synth.compiler import CompiledPass, CompiledUpdate, PassState, chain_ops, default_backend
from ..synth.plan import ExecutionPlan, Stage
from .pool import MemoryPool
from .scheduler import ExecutionError, ExecutorStats, SlowdownHook, TierTopology, schedule
from .updates import apply_update_sets

logger = logging.getLogger(__name__)

MIN_TILE = 64
JOIN_PAIRS_PER_BLOCK = 1 << 16


@dataclass
class RunStats:
    wall_ms: float = 0.0
    stages: list[dict] = field(default_factory=list)
    executors: list[dict] = field(default_factory=list)
    pool: dict = field(default_factory=dict)
    blocks: int = 0
    rows: int = 0
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "wall_ms": round(self.wall_ms, 3),
            "stages": self.stages,
            "executors": self.executors,
            "pool": self.pool,
            "blocks": self.blocks,
            "rows": self.rows,
            "iterations": self.iterations,
        }


@dataclass
class _Unit:
    kind: str  # pass | update | loop | relational
    stages: list[int]
    inputs: tuple[int, ...]
    output: int


def form_units(plan: ExecutionPlan) -> list[_Unit]:
    """Group tuple stages linked by cache-block materialization into single passes."""
    units: list[_Unit] = []
    for i, s in enumerate(plan.stages):
        if s.role == "tuple":
            prev = units[-1] if units else None
            if (
                prev is not None
                and prev.kind == "pass"
                and plan.stages[prev.stages[-1]].materialization == "cache-block"
                and s.input_ids == (prev.output,)
            ):
                prev.stages.append(i)
                prev.output = s.output_id
                continue
            units.append(_Unit("pass", [i], s.input_ids, s.output_id))
        else:
            units.append(_Unit(s.role, [i], s.input_ids, s.output_id))
    return units


class PlanExecutor:
    """Executes one plan against the sources recorded in it. Not reusable across threads."""

    def __init__(self, plan: ExecutionPlan, topo: TierTopology | None = None, hw: HardwareProfile | None = None,
                 backend: str | None = None, pool: MemoryPool | None = None, slowdown: SlowdownHook | None = None,
                 kernels: dict | None = None):
        self.plan = plan
        self.topo = topo or TierTopology()
        self.hw = hw or HardwareProfile()
        self.backend = backend or default_backend()
        self.pool = pool or MemoryPool()
        self.slowdown = slowdown
        self.kernels = kernels if kernels is not None else {}
        self.units = form_units(plan)
        self.env: dict[int, TupleSet] = {}
        self.owned: dict[int, list[np.ndarray]] = {}
        self.stats = RunStats()
        self._exec = [ExecutorStats(n, e) for n in range(self.topo.node_count)
                      for e in range(self.topo.executors_per_node)]
        self._stage_times: dict[str, dict] = {}

    # public
    def run(self) -> TupleSet:
        t0 = time.perf_counter()
        for sid, node in self.plan.sources.items():
            ts = node.source
            self.env[sid] = TupleSet(ts.relation, ts.context.copy())
        protect = {self.plan.result_id}
        self._run_units(list(range(len(self.units))), protect)
        out = self.env[self.plan.result_id]
        self.stats.wall_ms = (time.perf_counter() - t0) * 1e3
        self.stats.executors = [e.to_dict() for e in self._exec]
        self.stats.stages = list(self._stage_times.values())
        self.stats.pool = self.pool.stats.to_dict()
        return out

    # unit bookkeeping
    def _run_units(self, idxs: list[int], protect: set[int]) -> None:
        refs: dict[int, int] = {}
        for i in idxs:
            for j in self.units[i].inputs:
                refs[j] = refs.get(j, 0) + 1
        for i in idxs:
            u = self.units[i]
            self._run_unit(u, refs, protect)
            for j in u.inputs:
                refs[j] -= 1
                if refs[j] == 0 and j not in protect:
                    self._release(j)

    def _release(self, node_id: int) -> None:
        for buf in self.owned.pop(node_id, []):
            self.pool.release(buf)

    def _record(self, u: _Unit, seconds: float, rows: int, blocks: int) -> None:
        names = ", ".join(n for i in u.stages for n in self.plan.stages[i].names)
        key = f"{u.kind} {{{names}}}"
        rec = self._stage_times.setdefault(key, {"stage": key, "runs": 0, "ms": 0.0, "rows": 0, "blocks": 0})
        rec["runs"] += 1
        rec["ms"] = round(rec["ms"] + seconds * 1e3, 3)
        rec["rows"] += rows
        rec["blocks"] += blocks

    def _run_unit(self, u: _Unit, refs: dict[int, int], protect: set[int]) -> None:
        t0 = time.perf_counter()
        rows = blocks = 0
        if u.kind == "pass":
            rows, blocks = self._run_pass(u, refs, protect)
        elif u.kind == "update":
            self._run_update(u)
        elif u.kind == "loop":
            self._run_loop(u)
        else:
            self._run_relational(u)
        self._record(u, time.perf_counter() - t0, rows, blocks)

    # tuple passes
    def _compiled(self, stages: list[Stage], context_schema) -> CompiledPass:
        key = (self.backend, tuple((tuple(o.id for o in s.ops), s.reduce_lowering, s.lanes) for s in stages))
        cp = self.kernels.get(key)
        if cp is None:
            specs = [(chain_ops(s.ops), s.ops[0].node.inputs[0].types, s.reduce_lowering, s.lanes) for s in stages]
            label = " | ".join(",".join(s.names) for s in stages)
            cp = CompiledPass(specs, context_schema, backend=self.backend, label=label)
            self.kernels[key] = cp
        return cp

    def _tile(self, cp: CompiledPass, stages: list[Stage], n: int) -> int:
        if len(stages) == 1:
            return max(1, n)
        widest = max(len(s.ops[0].node.inputs[0].types) for s in stages)
        widest = max([widest] + [len(s.ops[-1].node.types) for s in stages[:-1]])
        return max(MIN_TILE, self.hw.cache_block_bytes // (4 * max(1, widest)))

    def _alloc(self, nrows: int, ncols: int, dtype) -> np.ndarray:
        if ncols == 0:
            return np.empty((0, nrows), dtype)
        return self.pool.alloc((ncols, nrows), dtype)

    def _run_pass(self, u: _Unit, refs: dict[int, int], protect: set[int]) -> tuple[int, int]:
        stages = [self.plan.stages[i] for i in u.stages]
        src_id = u.inputs[0]
        inp = self.env[src_id]
        rel, ctx = inp.relation, inp.context
        last = stages[-1]
        out_node = last.ops[-1].node
        cp = self._compiled(stages, ctx.schema)
        XF, XI = rel.packed()
        n = rel.cardinality
        tile = self._tile(cp, stages, n)
        ctx_flat = {k: ctx[k].reshape(-1) for k in cp.code.ctx_keys}
        W = self.topo.workers
        states: list[PassState | None] = [None] * W
        reduce = last.reduce is not None
        one_to_one = not reduce and all(s.one_to_one for s in stages)
        out_types = None if reduce else out_node.types
        owned: list[np.ndarray] = []

        if reduce:
            YF = np.empty((0, 0), np.float32)
            YI = np.empty((0, 0), np.int32)
        elif one_to_one:
            nf, ni = count_types(out_types)
            dead = refs.get(src_id, 0) == 1 and src_id not in protect and src_id in self.owned
            inplace = dead and len(stages) == 1
            if inplace and nf <= XF.shape[0] and nf > 0:
                YF = XF[:nf]
            else:
                YF = self._alloc(n, nf, np.float32)
                owned.append(YF)
            if inplace and ni <= XI.shape[0] and ni > 0:
                YI = XI[:ni]
            else:
                YI = self._alloc(n, ni, np.int32)
                owned.append(YI)
            if inplace:
                # the output now lives in the input's buffers
                owned.extend(b for b in self.owned.pop(src_id) if b.shape[0] > 0)
        pieces: dict[int, tuple[int, np.ndarray, np.ndarray]] = {}
        lock = threading.Lock()

        def work(idx: int, b) -> None:
            st = states[idx]
            if st is None:
                st = states[idx] = cp.new_state(min(tile, max(1, n)), self.pool.alloc)
            if reduce or one_to_one:
                cp.run(b.start, b.end, XF, XI, YF, YI, b.start, ctx_flat, st, tile)
                return
            nf, ni = count_types(out_types)
            cap = b.rows * cp.expansion
            bf = self._alloc(cap, nf, np.float32)
            bi = self._alloc(cap, ni, np.int32)
            m = cp.run(b.start, b.end, XF, XI, bf, bi, 0, ctx_flat, st, tile)
            with lock:
                pieces[b.start] = (m, bf, bi)

        res = schedule(src_id, n, rel.row_bytes, self.topo, work, self.slowdown)
        if res.rows != n:
            raise ExecutionError(f"pass {cp.label}: processed {res.rows} of {n} rows")
        for agg, e in zip(self._exec, res.executors):
            agg.busy_s += e.busy_s
            agg.idle_s += e.idle_s
            agg.blocks += e.blocks
            agg.rows += e.rows
        self.stats.blocks += res.blocks
        self.stats.rows += n

        if reduce:
            out = self._finish_reduce(cp, last, states, ctx)
        elif one_to_one:
            out = TupleSet(Relation.from_packed(out_node.schema, YF, YI, n), ctx)
        else:
            out = TupleSet(self._concat(out_node.schema, pieces, owned), ctx)
        for st in states:
            if st is not None:
                for t in st.temps:
                    self.pool.release(t)
        self.env[u.output] = out
        if owned:
            self.owned[u.output] = owned
        return n, res.blocks

    def _concat(self, schema, pieces, owned) -> Relation:
        nf, ni = count_types([t for _, t in schema])
        total = sum(m for m, _, _ in pieces.values())
        YF = self._alloc(total, nf, np.float32)
        YI = self._alloc(total, ni, np.int32)
        owned += [a for a in (YF, YI) if a.shape[0] > 0]
        pos = 0
        for start in sorted(pieces):
            m, bf, bi = pieces[start]
            YF[:, pos:pos + m] = bf[:, :m]
            YI[:, pos:pos + m] = bi[:, :m]
            pos += m
            for a in (bf, bi):
                if a.shape[0] > 0:
                    self.pool.release(a)
        return Relation.from_packed(schema, YF, YI, total)

    def _finish_reduce(self, cp: CompiledPass, stage: Stage, states, ctx: Context) -> TupleSet:
        node = stage.reduce.node
        live = [s for s in states if s is not None]
        new_ctx = apply_update_sets(ctx, [cp.update_set(s) for s in live])
        agg_types = node.udf.agg_types
        slots = cp.final.agg_slots
        parts = [cp.aggregates(s) for s in live]
        nf = sum(1 for b, _ in slots if b == "F")
        ni = len(slots) - nf
        if node.key is None:
            vf = np.zeros(nf, np.float64)
            vi = np.zeros(ni, np.int64)
            for _, f, i in parts:
                vf += f.sum(axis=0)
                vi += i.sum(axis=0)
            cols = [np.array([vf[p] if b == "F" else vi[p]], dtype=ACC_DTYPE[t]).astype(NUMPY_DTYPE[t])
                    for (b, p), t in zip(slots, agg_types)]
            return TupleSet(Relation.from_columns(node.schema, cols, 1), new_ctx)
        keys = np.concatenate([k for k, _, _ in parts]) if parts else np.zeros(0, np.int64)
        vf = np.concatenate([f for _, f, _ in parts]) if parts else np.zeros((0, nf))
        vi = np.concatenate([i for _, _, i in parts]) if parts else np.zeros((0, ni), np.int64)
        uniq, inv = np.unique(keys, return_inverse=True)
        sf = np.zeros((len(uniq), nf), np.float64)
        si = np.zeros((len(uniq), ni), np.int64)
        np.add.at(sf, inv, vf)
        np.add.at(si, inv, vi)
        cols = [uniq.astype(np.int32)]
        for (b, p), t in zip(slots, agg_types):
            src = sf[:, p] if b == "F" else si[:, p]
            cols.append(src.astype(ACC_DTYPE[t]).astype(NUMPY_DTYPE[t]))
        return TupleSet(Relation.from_columns(node.schema, cols, len(uniq)), new_ctx)

    # breakers
    def _run_update(self, u: _Unit) -> None:
        stage = self.plan.stages[u.stages[0]]
        op = stage.ops[0]
        inp = self.env[u.inputs[0]]
        key = (self.backend, "update", op.id)
        fn = self.kernels.get(key)
        if fn is None:
            fn = self.kernels[key] = CompiledUpdate(op.udf, backend=self.backend)
        ctx = inp.context.copy()
        fn(ctx)
        self.env[u.output] = TupleSet(inp.relation, ctx)

    def _loop_source(self, stage: Stage) -> int:
        ids = {n.id for n in stage.ops[0].node.ancestors() if n.kind == "source"}
        (sid,) = ids
        return sid

    def _run_loop(self, u: _Unit) -> None:
        stage = self.plan.stages[u.stages[0]]
        inv = stage.ops[0].udf
        sid = self._loop_source(stage)
        src_rel = self.plan.sources[sid].source.relation
        body_units = [i for i, bu in enumerate(self.units) if bu.kind != "loop"
                      and all(s in stage.body for s in bu.stages)]
        carried = u.inputs[0]
        cur = self.env[carried]
        while interpret(inv, (), cur.context):
            self.env[sid] = TupleSet(src_rel, cur.context)
            self._release(carried)
            self._run_units(body_units, {carried, self.plan.result_id})
            cur = self.env[carried]
            self.stats.iterations += 1
        self.env[u.output] = cur

    # relational operators
    def _run_relational(self, u: _Unit) -> None:
        stage = self.plan.stages[u.stages[0]]
        op = stage.ops[0]
        node = op.node
        left, right = (self.env[i] for i in u.inputs)
        ctx = left.context.merged(right.context)
        lr, rr = left.relation, right.relation
        if node.kind == "union":
            cols = [np.concatenate([a, b]) for a, b in zip(lr.columns, rr.columns)]
            rel = Relation.from_columns(node.schema, cols, lr.cardinality + rr.cardinality)
        elif node.kind == "difference":
            present = set(rr.rows())
            keep = [i for i, r in enumerate(lr.rows()) if r not in present]
            rel = lr.take(np.array(keep, dtype=np.int64)).with_names(node.names)
        elif node.kind == "cartesian":
            li = np.repeat(np.arange(lr.cardinality), rr.cardinality)
            ri = np.tile(np.arange(rr.cardinality), lr.cardinality)
            rel = _pair_relation(node.schema, lr, rr, li, ri)
        elif node.kind == "theta_join":
            rel = self._theta_join(op, lr, rr)
        else:  # pragma: no cover
            raise ValueError(node.kind)
        self.env[u.output] = TupleSet(rel, ctx)

    def _theta_join(self, op, lr: Relation, rr: Relation) -> Relation:
        """Blocked nested loops; the (planner-chosen) outer side is walked in blocks through a compiled filter."""
        node = op.node
        key = (self.backend, "join", op.id)
        # the pair index rides along as a trailing int column the predicate never reads
        tagged = node.types + ("i32",)
        cp = self.kernels.get(key)
        if cp is None:
            spec = ([ChainOp("filter", node.udf, None, None, tagged)], tagged, "none", 1)
            cp = self.kernels[key] = CompiledPass([spec], {}, backend=self.backend, label=f"join {node.udf.name}")
        outer, inner = (rr, lr) if op.swap else (lr, rr)
        per = max(1, JOIN_PAIRS_PER_BLOCK // max(1, inner.cardinality))
        keep_l, keep_r = [], []
        st = cp.new_state(1)
        nf, ni = count_types(tagged)
        for lo in range(0, outer.cardinality, per):
            hi = min(outer.cardinality, lo + per)
            oi = np.repeat(np.arange(lo, hi), inner.cardinality)
            ii = np.tile(np.arange(inner.cardinality), hi - lo)
            li, ri = (ii, oi) if op.swap else (oi, ii)
            n = len(li)
            XF, XI = _pair_relation(node.schema, lr, rr, li, ri).packed()
            XI = np.vstack([XI, np.arange(n, dtype=np.int32)[None, :]])
            YF = np.empty((nf, n), np.float32)
            YI = np.empty((ni, n), np.int32)
            m = cp.run(0, n, XF, XI, YF, YI, 0, {}, st, max(1, n))
            kept = YI[ni - 1, :m]
            keep_l.append(li[kept])
            keep_r.append(ri[kept])
        li = np.concatenate(keep_l) if keep_l else np.zeros(0, np.int64)
        ri = np.concatenate(keep_r) if keep_r else np.zeros(0, np.int64)
        if op.swap:
            order = np.lexsort((ri, li))
            li, ri = li[order], ri[order]
        return _pair_relation(node.schema, lr, rr, li, ri)


def _pair_relation(schema, lr: Relation, rr: Relation, li: np.ndarray, ri: np.ndarray) -> Relation:
    cols = [c[li] for c in lr.columns] + [c[ri] for c in rr.columns]
    return Relation.from_columns(schema, cols, len(li))
