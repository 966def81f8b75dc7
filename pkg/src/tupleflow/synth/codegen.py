"""Source generation for stage kernels.

Each tuple stage becomes one row loop over packed column blocks: f32 columns
live as rows of a 2-d ``(ncols, nrows)`` float32 array and i32 columns of an
int32 one. A pass (stages joined by cache-block materialization) gets a driver
that walks the exec block in tiles and runs the stage loops back to back over
cache-resident temporaries.

Kernels return ``(status, row, out_count)``; status 1 asks the caller to grow
the hash tables and resume at ``row``, status 2 reports an out-of-range
context index at ``row``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..context import BOOL, F32, I32, ContextSpec
from ..ir import LOOPS, Idx, Instr, UdfProgram, loop_var, walk

HASH_CHUNK = 16
UNROLL_LIMIT = 64
CTX_CODE_SHIFT = 40

_CMP_OP = {"lt": "<", "le": "<=", "eq": "==", "ne": "!=", "ge": ">=", "gt": ">"}

STATUS_OK, STATUS_GROW, STATUS_INDEX = 0, 1, 2


def layout(types: Sequence[str]) -> list[tuple[str, int]]:
    """Canonical packed position of each column: ('F', row) or ('I', row)."""
    nf = ni = 0
    out = []
    for t in types:
        if t == F32:
            out.append(("F", nf))
            nf += 1
        else:
            out.append(("I", ni))
            ni += 1
    return out


def count_types(types: Sequence[str]) -> tuple[int, int]:
    nf = sum(1 for t in types if t == F32)
    return nf, len(types) - nf


def _fconst(v: float) -> str:
    return f"np.float32({float(np.float32(v))!r})"


@dataclass
class ChainOp:
    """What the generator needs to know about one fused operator."""

    kind: str
    udf: UdfProgram | None = None
    key: UdfProgram | None = None
    order: tuple[int, ...] | None = None
    out_types: tuple[str, ...] = ()


@dataclass
class StageCode:
    name: str
    lines: list[str]
    in_types: tuple[str, ...]
    out_types: tuple[str, ...] | None  # None for a reduce sink
    ctx_keys: tuple[str, ...]
    lowering: str = "none"
    lanes: int = 1
    acc_keys: tuple[str, ...] = ()
    agg_slots: tuple[tuple[str, int], ...] = ()
    keyed: bool = False
    expansion: int = 1
    ctx_writes_per_row: int = 0
    reserve_rows: int = 1  # rows of hash capacity the kernel checks for before each step

    @property
    def reduce_args(self) -> list[str]:
        if self.lowering == "hash-table":
            return ["GK", "GU", "GVF", "GVI", "GC", "CK", "CU", "CVF", "CVI", "CC"]
        if self.lowering in ("reduction-variable", "direct-index"):
            return ["AGF", "AGI"] + [f"A_{k}" for k in range(len(self.acc_keys))]
        return []


class _Names:
    def __init__(self):
        self._c = itertools.count()

    def __call__(self, prefix: str = "t") -> str:
        return f"{prefix}{next(self._c)}"


class _Writer:
    def __init__(self, depth: int = 1):
        self.lines: list[str] = []
        self.depth = depth

    def __call__(self, line: str) -> None:
        self.lines.append("    " * self.depth + line)

    def indent(self):
        self.depth += 1

    def dedent(self):
        self.depth -= 1


class UdfEmitter:
    """Emit straight Python for one UDF invocation into a writer.

    ``ctx_name`` maps context keys to the flat array argument names.
    ``on_ctx_write(op, key, flat, value)`` and ``on_agg(slot, value)`` decide
    what writes mean in the surrounding kernel; ``on_emit(outs, cond)``
    continues the fused chain for flatmaps.
    """

    def __init__(self, p: UdfProgram, w: _Writer, names: _Names, ctx_name: dict[str, str], fail: str,
                 hoist: dict | None = None, preamble: list[str] | None = None):
        self.p = p
        self.w = w
        self.names = names
        self.ctx_name = ctx_name
        self.fail = fail
        self.hoist = hoist
        self.preamble = preamble
        self.env: dict[int, str] = {}
        self.types: dict[int, str] = {}
        self.loop_const: dict[int, int] = {}
        self.loop_name: dict[int, str] = {}
        self.loop_bounds: dict[int, tuple[int, int]] = {}
        # packed (block, row) of each input variable when it is a raw column load
        self.field_rows: list[tuple[str, int] | None] = []
        self.outs: list[str | None] = [None] * len(p.out_types)
        self.result: str | None = None
        self.on_ctx_write: Callable | None = None
        self.on_agg: Callable | None = None
        self.on_emit: Callable | None = None

    # index expressions
    def idx(self, i: Idx) -> tuple[str, bool]:
        """(python expression, is_static)"""
        if i.base is None:
            return str(i.offset), True
        if i.base in self.loop_const:
            return str(self.loop_const[i.base] + i.offset), True
        if i.base in self.loop_name:
            name = self.loop_name[i.base]
            return (f"({name} + {i.offset})" if i.offset else name), True
        e = f"int({self.env[i.base]})"
        return (f"({e} + {i.offset})" if i.offset else e), False

    def flat_index(self, key: str, idxs: Sequence[Idx]) -> tuple[str, bool]:
        spec: ContextSpec = self.p.context[key]
        strides = [int(np.prod(spec.shape[k + 1:], dtype=np.int64)) for k in range(len(spec.shape))]
        terms, static, const_total = [], True, 0
        for dim, stride, i in zip(spec.shape, strides, idxs):
            e, st = self.idx(i)
            if not st:
                static = False
                v = self.names("ix")
                self.w(f"{v} = {e}")
                self.w(f"if {v} < 0 or {v} >= {dim}:")
                self.w(f"    {self.fail}")
                e = v
            if e.lstrip("-").isdigit():
                const_total += int(e) * stride
            else:
                terms.append(f"{e} * {stride}" if stride != 1 else e)
        if const_total or not terms:
            terms.append(str(const_total))
        return " + ".join(terms), static and all(t.lstrip("-").isdigit() for t in terms)

    def define(self, ins: Instr, t: str, expr: str) -> None:
        name = self.names()
        self.w(f"{name} = {expr}")
        self.env[ins.dest] = name
        self.types[ins.dest] = t

    def run(self, body: Sequence[Instr]) -> None:
        for ins in body:
            self.instr(ins)

    def _field_span(self, i: Idx, bounds: dict) -> tuple[str, int] | None:
        """(block, row - field) for a loop-indexed field load over contiguous packed rows."""
        lo, hi = bounds[i.base]
        lo, hi = lo + i.offset, hi - 1 + i.offset
        rows = self.field_rows[lo: hi + 1] if hi < len(self.field_rows) else []
        if len(rows) != hi - lo + 1 or any(r is None for r in rows):
            return None
        blk, row0 = rows[0]
        if any(b != blk or r != row0 + k for k, (b, r) in enumerate(rows)):
            return None
        return blk, row0 - lo

    def _keep_loop(self, ins: Instr) -> bool:
        inner = list(walk(ins.body))
        if any(i.op in ("store-field", "emit-tuple", "agg-add") for i in inner):
            return False
        lo, hi = ins.args[:2]
        bounds = dict(self.loop_bounds)
        bounds[loop_var(ins)] = (lo, hi)
        bounds.update((loop_var(i), i.args[:2]) for i in inner if i.op in LOOPS)
        for i in inner:
            if i.op == "load-field" and i.args[0].base is not None:
                if i.args[0].base in self.loop_const or self._field_span(i.args[0], bounds) is None:
                    return False
        return (hi - lo) * len(inner) > UNROLL_LIMIT

    def instr(self, ins: Instr) -> None:
        op, a = ins.op, ins.args
        env, types = self.env, self.types
        if op == "const":
            t, v = a
            if t == F32:
                expr = _fconst(v)
            elif t == I32:
                expr = f"np.int32({int(v)})"
            else:
                expr = "True" if v else "False"
            self.define(ins, t, expr)
        elif op == "load-field":
            e = self.idx(a[0])[0]
            if e.lstrip("-").isdigit():
                env[ins.dest] = self.inputs[int(e)]
                types[ins.dest] = self.p.in_types[int(e)]
            else:
                blk, shift = self._field_span(a[0], self.loop_bounds)
                lo = self.loop_bounds[a[0].base][0] + a[0].offset
                self.define(ins, self.p.in_types[lo], f"X{blk}[{e} + {shift}, r]" if shift else f"X{blk}[{e}, r]")
        elif op == "store-field":
            self.outs[int(self.idx(a[0])[0])] = env[a[1]]
        elif op == "load-context":
            flat, static = self.flat_index(a[0], a[1])
            arr = self.ctx_name[a[0]]
            dtype = self.p.context[a[0]].dtype
            if static and self.hoist is not None:
                hk = (a[0], flat)
                if hk not in self.hoist:
                    hv = self.names("h")
                    self.hoist[hk] = hv
                    self.preamble.append(f"{hv} = {arr}[{flat}]")
                env[ins.dest] = self.hoist[hk]
                types[ins.dest] = dtype
            else:
                self.define(ins, dtype, f"{arr}[{flat}]")
        elif op in ("context-add", "context-increment", "store-context"):
            flat, _ = self.flat_index(a[0], a[1])
            value = env[a[2]] if op != "context-increment" else None
            self.on_ctx_write(op, a[0], flat, value)
        elif op in ("add", "sub", "mul"):
            sym = {"add": "+", "sub": "-", "mul": "*"}[op]
            t = types[a[0]]
            e = f"{env[a[0]]} {sym} {env[a[1]]}"
            self.define(ins, t, e if t == F32 else f"np.int32({e})")
        elif op == "div":
            t = types[a[0]]
            if t == F32:
                self.define(ins, t, f"{env[a[0]]} / {env[a[1]]}")
            else:
                self.define(ins, t, f"_idiv({env[a[0]]}, {env[a[1]]})")
        elif op in ("sqrt", "exp", "log"):
            self.define(ins, F32, f"np.{op}({env[a[0]]})")
        elif op == "to-float":
            self.define(ins, F32, f"np.float32({env[a[0]]})")
        elif op == "min-select":
            best, k = self.names("mb"), self.names("mk")
            self.w(f"{best} = {env[a[0]]}")
            self.w(f"{k} = np.int32(0)")
            for j, v in enumerate(a[1:], start=1):
                self.w(f"if {env[v]} < {best}:")
                self.w(f"    {best} = {env[v]}")
                self.w(f"    {k} = np.int32({j})")
            env[ins.dest] = k
            types[ins.dest] = I32
        elif op == "cmp":
            self.define(ins, BOOL, f"{env[a[1]]} {_CMP_OP[a[0]]} {env[a[2]]}")
        elif op == "select":
            self.define(ins, types[a[1]], f"{env[a[1]]} if {env[a[0]]} else {env[a[2]]}")
        elif op == "for-range":
            lo, hi = a
            if self._keep_loop(ins):
                var = self.names("i")
                self.w(f"for {var} in range({lo}, {hi}):")
                self.w.indent()
                self.loop_name[ins.dest] = var
                self.loop_bounds[ins.dest] = (lo, hi)
                self.define(ins, I32, f"np.int32({var})")
                self.run(ins.body)
                self.w("pass")
                self.w.dedent()
                del self.loop_name[ins.dest], self.loop_bounds[ins.dest]
            else:
                for it in range(lo, hi):
                    self.loop_const[ins.dest] = it
                    self.define(ins, I32, f"np.int32({it})")
                    self.run(ins.body)
                self.loop_const.pop(ins.dest, None)
        elif op == "sum-range":
            lo, hi, v, yielded, t = a
            acc = self.names("acc")
            zero = _fconst(0.0) if t == F32 else "np.int32(0)"
            self.w(f"{acc} = {zero}")
            keep = self._keep_loop(ins)
            if keep:
                var = self.names("i")
                self.w(f"for {var} in range({lo}, {hi}):")
                self.w.indent()
                self.loop_name[v] = var
                self.loop_bounds[v] = (lo, hi)
                iters = [None]
            else:
                iters = range(lo, hi)
            for it in iters:
                if it is None:
                    env[v] = self.names()
                    self.w(f"{env[v]} = np.int32({var})")
                else:
                    self.loop_const[v] = it
                    env[v] = self.names()
                    self.w(f"{env[v]} = np.int32({it})")
                types[v] = I32
                self.run(ins.body)
                add = f"{acc} + {env[yielded]}"
                self.w(f"{acc} = {add if t == F32 else f'np.int32({add})'}")
            if keep:
                self.w.dedent()
                del self.loop_name[v], self.loop_bounds[v]
            self.loop_const.pop(v, None)
            env[ins.dest] = acc
            types[ins.dest] = t
        elif op == "emit-tuple":
            cond = env[a[0]] if a else None
            self.on_emit(list(self.outs), cond)
        elif op in ("return-bool", "return-key"):
            self.result = env[a[0]]
        elif op == "agg-add":
            self.on_agg(a[0], env[a[1]])
        else:  # pragma: no cover
            raise ValueError(f"cannot generate code for {op!r}")

    inputs: list[str] = []


def _acc_add(target: str, value: str | None) -> str:
    return f"{target} += {value if value is not None else 1}"


class StageGenerator:
    """Generate the row-loop function for one tuple stage."""

    def __init__(self, name: str, ops: Sequence[ChainOp], in_types: Sequence[str], lowering: str = "none",
                 lanes: int = 1, context: dict[str, ContextSpec] | None = None):
        self.name = name
        self.ops = list(ops)
        self.in_types = tuple(in_types)
        self.lowering = lowering
        self.lanes = max(1, lanes) if lowering == "reduction-variable" else 1
        self.context = dict(context or {})
        self.reduce = self.ops[-1] if self.ops and self.ops[-1].kind == "reduce" else None
        self.names = _Names()
        keys: list[str] = []
        for op in self.ops:
            for p in (op.udf, op.key):
                if p is not None:
                    for k in p.context:
                        if k not in keys:
                            keys.append(k)
        self.ctx_keys = tuple(keys)
        self.ctx_name = {k: f"C_{i}" for i, k in enumerate(keys)}
        self.acc_keys: tuple[str, ...] = ()
        self.agg_slots: tuple[tuple[str, int], ...] = ()
        if self.reduce is not None:
            r = self.reduce.udf
            self.acc_keys = tuple(k for k in self.ctx_keys if k in r.writes)
            nf = ni = 0
            slots = []
            for t in r.agg_types:
                if t == F32:
                    slots.append(("F", nf))
                    nf += 1
                else:
                    slots.append(("I", ni))
                    ni += 1
            self.agg_slots = tuple(slots)
        self.in_layout = layout(self.in_types)
        self.expansion = 1
        for op in self.ops:
            if op.kind == "flatmap":
                self.expansion *= max(1, op.udf.emit_count)
        self.out_types = None if self.reduce is not None else (self.ops[-1].out_types if self.ops else self.in_types)
        self.ctx_writes_per_row = 0
        if self.reduce is not None:
            n = sum(1 for i in self.reduce.udf.flat if i.op in ("context-add", "context-increment"))
            self.ctx_writes_per_row = n * self.expansion

    # writes inside a reduce sink
    def _reduce_ctx_write(self, lane: str):
        def write(op, key, flat, value):
            kid = self.ctx_keys.index(key)
            if self.lowering == "hash-table":
                s = self.names("cs")
                self.cur(f"{s} = _probe(CK, CU, CC, np.int64({kid * (1 << CTX_CODE_SHIFT)} + {flat}))")
                col = "CVF" if self.context_dtype(key) == F32 else "CVI"
                self.cur(_acc_add(f"{col}[{s}, 0]", value))
            else:
                a = self.acc_keys.index(key)
                self.cur(_acc_add(f"A_{a}[{lane}, {flat}]", value))
        return write

    def _reduce_agg(self, lane: str, gslot: str | None):
        def agg(slot, value):
            block, pos = self.agg_slots[slot]
            if self.lowering == "hash-table":
                self.cur(f"GV{block}[{gslot}, {pos}] += {value}")
            else:
                self.cur(f"AG{block}[{lane}, {pos}] += {value}")
        return agg

    def context_dtype(self, key: str) -> str:
        for op in self.ops:
            for p in (op.udf, op.key):
                if p is not None and key in p.context:
                    return p.context[key].dtype
        return self.context[key].dtype

    def _udf(self, p: UdfProgram, vars_: list[str]) -> UdfEmitter:
        em = UdfEmitter(p, self.cur, self.names, self.ctx_name, "return 2, r, m", self.hoist, self.preamble)
        em.inputs = vars_
        raw = {f"x{b}{row}": (b, row) for b, row in self.in_layout}
        em.field_rows = [raw.get(v) for v in vars_]
        return em

    def _chain(self, k: int, vars_: list[str], lane: str, gslot_key: Callable | None) -> None:
        """Emit operators k.. of the chain on the current tuple ``vars_``."""
        w = self.cur
        if k == len(self.ops):
            assert self.out_types is not None
            for j, (blk, row) in enumerate(layout(self.out_types)):
                w(f"Y{blk}[{row}, m] = {vars_[j]}")
            w("m += 1")
            return
        op = self.ops[k]
        if op.kind == "rename":
            self._chain(k + 1, [vars_[j] for j in op.order], lane, gslot_key)
        elif op.kind in ("map", "projection"):
            em = self._udf(op.udf, vars_)
            em.run(op.udf.body)
            self._chain(k + 1, list(em.outs), lane, gslot_key)
        elif op.kind in ("filter", "selection"):
            em = self._udf(op.udf, vars_)
            em.run(op.udf.body)
            w(f"if {em.result}:")
            w.indent()
            self._chain(k + 1, vars_, lane, gslot_key)
            w("pass")
            w.dedent()
        elif op.kind == "flatmap":
            em = self._udf(op.udf, vars_)

            def on_emit(outs, cond):
                if cond is not None:
                    w(f"if {cond}:")
                    w.indent()
                self._chain(k + 1, list(outs), lane, gslot_key)
                if cond is not None:
                    w("pass")
                    w.dedent()

            em.on_emit = on_emit
            em.run(op.udf.body)
        elif op.kind == "reduce":
            gslot = None
            if self.lowering == "hash-table":
                gslot = self.names("gs")
                if gslot_key is not None:
                    gslot_key(gslot)
                else:
                    if op.key is not None:
                        kem = self._udf(op.key, vars_)
                        kem.run(op.key.body)
                        key = kem.result
                    else:
                        key = "0"
                    w(f"{gslot} = _probe(GK, GU, GC, np.int64({key}))")
            em = self._udf(op.udf, vars_)
            em.on_ctx_write = self._reduce_ctx_write(lane)
            em.on_agg = self._reduce_agg(lane, gslot)
            em.run(op.udf.body)
        else:  # pragma: no cover
            raise ValueError(op.kind)

    def _row(self, lane: str, gslot_key: Callable | None = None) -> list[str]:
        """Body of one row iteration with input loads prepended."""
        body = _Writer(0)
        self.cur = body
        vars_ = [f"x{b}{row}" for b, row in self.in_layout]
        self._chain(0, vars_, lane, gslot_key)
        text = "\n".join(body.lines)
        loads = [
            f"{v} = X{b}[{row}, r]"
            for v, (b, row) in zip(vars_, self.in_layout)
            if _mentions(text, v)
        ]
        return loads + body.lines

    def generate(self) -> StageCode:
        self.hoist: dict = {}
        self.preamble: list[str] = []
        params = ["lo", "hi", "r0", "m0", "XF", "XI", "YF", "YI"]
        params += [self.ctx_name[k] for k in self.ctx_keys]
        code = StageCode(self.name, [], self.in_types, self.out_types, self.ctx_keys, self.lowering,
                         self.lanes, self.acc_keys, self.agg_slots, bool(self.reduce and self.reduce.key),
                         self.expansion, self.ctx_writes_per_row)
        params += code.reduce_args
        out = [f"def {self.name}({', '.join(params)}):"]
        body: list[str] = []
        two_phase = (
            self.lowering == "hash-table" and len(self.ops) == 1 and self.reduce is not None and self.reduce.key is not None
        )
        start = "max(lo, r0)"
        body.append("m = m0")
        if self.lowering == "hash-table":
            body.append("glim = (GK.shape[0] * 7) // 10")
            body.append("clim = (CK.shape[0] * 7) // 10")
        if two_phase:
            code.reserve_rows = HASH_CHUNK
            body += self._two_phase()
        elif self.lowering == "reduction-variable" and self.lanes > 1:
            L = self.lanes
            body.append(f"s0 = {start}")
            body.append(f"full = s0 + ((hi - s0) // {L}) * {L}")
            body.append(f"for base in range(s0, full, {L}):")
            body.append(f"    for l in range({L}):")
            body.append("        r = base + l")
            body += ["        " + ln for ln in self._row("l")]
            body.append("for r in range(full, hi):")
            body += ["    " + ln for ln in self._row("0")]
        else:
            body.append(f"for r in range({start}, hi):")
            if self.lowering == "hash-table":
                body.append(
                    f"    if GC[0] + {self.expansion} > glim or CC[0] + {self.ctx_writes_per_row} > clim:"
                )
                body.append("        return 1, r, m")
            body += ["    " + ln for ln in self._row("0")]
        body.append("return 0, hi, m")
        # the preamble is filled while rows are generated, so it goes in last
        body = ["m = m0"] + self.preamble + body[1:] if self.preamble else body
        out += ["    " + ln for ln in body]
        code.lines = out
        return code

    def _two_phase(self) -> list[str]:
        """Hash calculation for a chunk of rows first, then the serial probe-and-update."""
        op = self.reduce
        C = HASH_CHUNK
        lines = [
            f"kb = np.empty({C}, np.int64)",
            f"hb = np.empty({C}, np.int64)",
            "base = max(lo, r0)",
            "while base < hi:",
            f"    cnt = min({C}, hi - base)",
            f"    if GC[0] + cnt > glim or CC[0] + cnt * {max(self.ctx_writes_per_row, 0)} > clim:",
            "        return 1, base, m",
            "    for l in range(cnt):",
            "        r = base + l",
        ]
        # phase 1: keys and hashes
        w = _Writer(0)
        self.cur = w
        vars_ = [f"x{b}{row}" for b, row in self.in_layout]
        kem = self._udf(op.key, vars_)
        kem.run(op.key.body)
        w(f"kb[l] = np.int64({kem.result})")
        w("hb[l] = _hash(kb[l])")
        text = "\n".join(w.lines)
        loads = [f"{v} = X{b}[{row}, r]" for v, (b, row) in zip(vars_, self.in_layout) if _mentions(text, v)]
        lines += ["        " + ln for ln in loads + w.lines]
        # phase 2: fetch and update
        lines += ["    for l in range(cnt):", "        r = base + l"]

        def gslot_key(gs):
            self.cur(f"{gs} = _probe_h(GK, GU, GC, kb[l], hb[l])")

        lines += ["        " + ln for ln in self._row("0", gslot_key)]
        lines.append("    base += cnt")
        return lines


def _mentions(text: str, name: str) -> bool:
    import re

    return re.search(rf"\b{re.escape(name)}\b", text) is not None


class UpdateGenerator:
    """Single-threaded kernel for update UDFs: context arrays are modified in place."""

    def __init__(self, name: str, p: UdfProgram):
        self.name = name
        self.p = p

    def generate(self) -> tuple[list[str], tuple[str, ...]]:
        keys = tuple(self.p.context)
        ctx_name = {k: f"C_{i}" for i, k in enumerate(keys)}
        w = _Writer(1)
        em = UdfEmitter(self.p, w, _Names(), ctx_name, "return 2")
        em.inputs = []

        def write(op, key, flat, value):
            arr = ctx_name[key]
            cast = "np.float32" if self.p.context[key].dtype == F32 else "np.int32"
            if op == "store-context":
                w(f"{arr}[{flat}] = {value}")
            elif op == "context-add":
                w(f"{arr}[{flat}] = {cast}({arr}[{flat}] + {value})")
            else:
                w(f"{arr}[{flat}] = {cast}({arr}[{flat}] + 1)")

        em.on_ctx_write = write
        em.run(self.p.body)
        w("return 0")
        return [f"def {self.name}({', '.join(ctx_name[k] for k in keys)}):"] + w.lines, keys


@dataclass
class PassCode:
    """Generated source for one pass plus the metadata the runtime needs to call it."""

    source: str
    stages: list[StageCode]
    ctx_keys: tuple[str, ...]
    temps: list[tuple[int, int, int]] = field(default_factory=list)  # (nf, ni, expansion) per non-final stage


HEADER = '''import numpy as np

SEED = np.int64(0x2545F4914F6CDD1D)
MUL = np.int64(-7046029254386353131)


{deco}
def _idiv(a, b):
    if b == 0:
        return np.int32(0)
    return np.int32(np.int64(a) // np.int64(b))


{deco}
def _hash(k):
    h = (k ^ SEED) * MUL
    return h ^ ((h >> 32) & 0xFFFFFFFF)


{deco}
def _probe_h(keys, used, count, k, h):
    mask = keys.shape[0] - 1
    i = h & mask
    while True:
        if used[i] == 0:
            used[i] = 1
            keys[i] = k
            count[0] += 1
            return i
        if keys[i] == k:
            return i
        i = (i + 1) & mask


{deco}
def _probe(keys, used, count, k):
    return _probe_h(keys, used, count, k, _hash(k))


{deco}
def _reinsert(keys, used, vf, vi, nkeys, nused, nvf, nvi, ncount):
    for i in range(keys.shape[0]):
        if used[i] != 0:
            s = _probe(nkeys, nused, ncount, keys[i])
            for j in range(vf.shape[1]):
                nvf[s, j] = vf[i, j]
            for j in range(vi.shape[1]):
                nvi[s, j] = vi[i, j]
'''


def _decorate(lines: list[str], deco: str) -> list[str]:
    return ([deco] if deco else []) + lines


def generate_pass(
    stage_specs: Sequence[tuple[Sequence[ChainOp], Sequence[str], str, int]],
    context: dict[str, ContextSpec],
    deco: str,
) -> PassCode:
    """Source for a pass: one function per stage and a tiling driver ``drive``.

    ``stage_specs`` items are ``(ops, input_types, reduce_lowering, lanes)``.
    """
    stages: list[StageCode] = []
    for k, (ops, in_types, lowering, lanes) in enumerate(stage_specs):
        stages.append(StageGenerator(f"stage{k}", ops, in_types, lowering, lanes, context).generate())
    ctx_keys: list[str] = []
    for s in stages:
        for key in s.ctx_keys:
            if key not in ctx_keys:
                ctx_keys.append(key)
    cname = {key: f"P_{i}" for i, key in enumerate(ctx_keys)}
    final = stages[-1]
    temps = []
    exp = 1
    for s in stages[:-1]:
        exp *= s.expansion
        nf, ni = count_types(s.out_types)
        temps.append((nf, ni, exp))
    params = ["lo", "hi", "t_start", "r_resume", "m0", "tile", "XF", "XI", "YF", "YI"]
    for k in range(len(temps)):
        params += [f"T{k}F", f"T{k}I"]
    params += [cname[key] for key in ctx_keys]
    params += final.reduce_args
    d = [f"def drive({', '.join(params)}):", "    m = m0", "    t0 = t_start", "    while t0 < hi:",
         "        t1 = min(hi, t0 + tile)"]
    src_f, src_i, src_lo, src_hi = "XF", "XI", "t0", "t1"
    for k, s in enumerate(stages):
        cargs = [cname[key] for key in s.ctx_keys]
        last = k == len(stages) - 1
        if last:
            r0 = "r_resume if t0 == t_start else " + src_lo
            args = [src_lo, src_hi, f"({r0})", "m", src_f, src_i, "YF", "YI", *cargs, *s.reduce_args]
            d.append(f"        st, r, m = {s.name}({', '.join(args)})")
            d.append("        if st != 0:")
            d.append("            return st, t0, r, m")
        else:
            args = [src_lo, src_hi, src_lo, "0", src_f, src_i, f"T{k}F", f"T{k}I", *cargs]
            d.append(f"        st, r, n{k} = {s.name}({', '.join(args)})")
            d.append("        if st != 0:")
            d.append("            return st, t0, 0, m")
            src_f, src_i, src_lo, src_hi = f"T{k}F", f"T{k}I", "0", f"n{k}"
    d += ["        t0 = t1", "    return 0, hi, 0, m"]
    parts = [HEADER.format(deco=deco)]
    for s in stages:
        parts.append("\n".join(_decorate(s.lines, deco)))
    parts.append("\n".join(_decorate(d, deco)))
    return PassCode("\n\n\n".join(parts) + "\n", stages, tuple(ctx_keys), temps)


def generate_update(p: UdfProgram, deco: str) -> tuple[str, tuple[str, ...]]:
    lines, keys = UpdateGenerator("update", p).generate()
    return HEADER.format(deco=deco) + "\n\n" + "\n".join(_decorate(lines, deco)) + "\n", keys
