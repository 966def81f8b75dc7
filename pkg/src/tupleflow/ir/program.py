"""Typed instruction IR for user-defined functions and its contract checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Mapping

from ..context import BOOL, F32, I32, ContextSpec

KINDS = ("predicate", "map", "flatmap", "reduce-body", "update", "invariant", "key")

ARITH = ("add", "sub", "mul", "div")
UNARY_FLOAT = ("sqrt", "exp", "log")
CMP_PREDICATES = ("lt", "le", "eq", "ne", "ge", "gt")

OPCODES = (
    "const", "load-field", "store-field", "load-context", "context-add",
    "context-increment", "store-context", *ARITH, *UNARY_FLOAT, "to-float",
    "min-select", "cmp", "select", "for-range", "sum-range", "emit-tuple", "return-bool",
    "return-key", "agg-add",
)

# kinds allowed to use each restricted opcode
_READS_TUPLE = {"predicate", "map", "flatmap", "reduce-body", "key"}
_PERMITTED = {
    "load-field": _READS_TUPLE,
    "store-field": {"map", "flatmap"},
    "emit-tuple": {"flatmap"},
    "context-add": {"reduce-body", "update"},
    "context-increment": {"reduce-body", "update", "invariant"},
    "store-context": {"update"},
    "agg-add": {"reduce-body"},
    "return-bool": {"predicate", "invariant"},
    "return-key": {"key"},
}
_DATA_INDEX_KINDS = {"reduce-body", "update"}


class ContractViolation(ValueError):
    """A UDF does not respect its operator contract or the IR typing rules."""

    def __init__(self, message: str, instr: "Instr | None" = None, program: str | None = None):
        self.instr = instr
        self.program = program
        where = f" in {program!r}" if program else ""
        at = f" at `{instr}`" if instr is not None else ""
        super().__init__(f"{message}{where}{at}")


@dataclass(frozen=True)
class Idx:
    """Index operand: a constant, or a value id plus a constant offset."""

    base: int | None = None
    offset: int = 0

    @property
    def is_const(self) -> bool:
        return self.base is None

    def __str__(self) -> str:
        if self.base is None:
            return str(self.offset)
        if self.offset == 0:
            return f"%{self.base}"
        sign = "+" if self.offset > 0 else "-"
        return f"%{self.base}{sign}{abs(self.offset)}"


@dataclass(frozen=True)
class Instr:
    """One IR instruction.

    ``args`` layout by opcode:

    ========================  ===================================
    const                     (type, value)
    load-field                (Idx,)
    store-field               (Idx, value)
    load-context              (name, (Idx, ...))
    context-add/store-context (name, (Idx, ...), value)
    context-increment         (name, (Idx, ...))
    add/sub/mul/div           (a, b)
    sqrt/exp/log/to-float     (a,)
    min-select                (a, b, ...)
    cmp                       (predicate, a, b)
    select                    (cond, a, b)
    for-range                 (lo, hi); ``dest`` is the loop variable
    sum-range                 (lo, hi, var, yielded, type); ``dest`` is the
                              sum of ``yielded`` over the iterations
    emit-tuple                () or (cond,)
    return-bool/return-key    (value,)
    agg-add                   (slot, value)
    ========================  ===================================
    """

    op: str
    dest: int | None = None
    args: tuple = ()
    body: tuple["Instr", ...] = ()

    def __str__(self) -> str:
        from .text import format_instr

        return format_instr(self).strip()

    def value_operands(self) -> list[int]:
        """Ids of SSA values read by this instruction (index bases included)."""
        op, a = self.op, self.args
        out: list[int] = []
        if op in ("load-field",):
            idx = a[0]
            if idx.base is not None:
                out.append(idx.base)
        elif op == "store-field":
            if a[0].base is not None:
                out.append(a[0].base)
            out.append(a[1])
        elif op in ("load-context", "context-increment"):
            out.extend(i.base for i in a[1] if i.base is not None)
        elif op in ("context-add", "store-context"):
            out.extend(i.base for i in a[1] if i.base is not None)
            out.append(a[2])
        elif op in ARITH or op in UNARY_FLOAT or op in ("to-float", "min-select"):
            out.extend(a)
        elif op == "cmp":
            out.extend(a[1:])
        elif op == "select":
            out.extend(a)
        elif op in ("emit-tuple", "return-bool", "return-key"):
            out.extend(a)
        elif op == "agg-add":
            out.append(a[1])
        return out


LOOPS = ("for-range", "sum-range")


def loop_var(ins: Instr) -> int | None:
    """Id of the loop variable bound by a loop instruction."""
    if ins.op == "for-range":
        return ins.dest
    if ins.op == "sum-range":
        return ins.args[2]
    return None


def walk(body: tuple[Instr, ...]) -> Iterator[Instr]:
    for ins in body:
        yield ins
        if ins.body:
            yield from walk(ins.body)


def loop_vars(body: tuple[Instr, ...]) -> set[int]:
    return {loop_var(i) for i in walk(body) if i.op in LOOPS}


@dataclass(frozen=True, eq=False)
class UdfProgram:
    """A closed, typed λ-function: the unit the analyzer and code generator inspect."""

    name: str
    kind: str
    body: tuple[Instr, ...]
    in_types: tuple[str, ...] = ()
    out_types: tuple[str, ...] = ()
    agg_types: tuple[str, ...] = ()
    context: Mapping[str, ContextSpec] = field(default_factory=dict)
    writes: frozenset[str] = frozenset()

    @cached_property
    def flat(self) -> tuple[Instr, ...]:
        """Body with every bounded loop unrolled and loop variables folded to constants."""
        return unroll(self.body)

    @cached_property
    def types(self) -> dict[int, str]:
        """Result type of every SSA value in the unrolled body."""
        return validate(self)._types_of_flat()

    def _types_of_flat(self) -> dict[int, str]:
        types: dict[int, str] = {}
        for ins in self.flat:
            if ins.dest is not None:
                types[ins.dest] = _result_type(ins, types, self)
        return types

    @cached_property
    def fields_read(self) -> tuple[int, ...]:
        return tuple(sorted({i.args[0].offset for i in self.flat if i.op == "load-field"}))

    @cached_property
    def emit_count(self) -> int:
        return sum(1 for i in self.flat if i.op == "emit-tuple")

    def reads_context(self) -> bool:
        return bool(self.context)

    def __repr__(self) -> str:
        return f"UdfProgram({self.name!r}, kind={self.kind!r}, {len(self.body)} instrs)"


def _result_type(ins: Instr, types: Mapping[int, str], prog: UdfProgram) -> str:
    op = ins.op
    if op == "const":
        return ins.args[0]
    if op == "load-field":
        return prog.in_types[ins.args[0].offset] if ins.args[0].is_const else F32
    if op == "load-context":
        return prog.context[ins.args[0]].dtype
    if op in ARITH:
        return types[ins.args[0]]
    if op in UNARY_FLOAT or op == "to-float":
        return F32
    if op == "min-select":
        return I32
    if op == "cmp":
        return BOOL
    if op == "select":
        return types[ins.args[1]]
    if op == "for-range":
        return I32
    if op == "sum-range":
        return ins.args[4]
    raise ContractViolation(f"opcode {op!r} defines no value", ins, prog.name)


def unroll(body: tuple[Instr, ...]) -> tuple[Instr, ...]:
    """Expand bounded loops, renaming per-iteration values to fresh ids.

    A ``sum-range`` becomes its iterations followed by a left-to-right add
    chain seeded with zero.
    """
    ids = [i.dest for i in walk(body) if i.dest is not None] + list(loop_vars(body))
    max_id = max(ids, default=-1)
    counter = [max_id + 1]
    out: list[Instr] = []

    def fresh() -> int:
        counter[0] += 1
        return counter[0] - 1

    def sub_idx(idx: Idx, env: dict, consts: dict) -> Idx:
        if idx.base is None:
            return idx
        if idx.base in consts:
            return Idx(None, consts[idx.base] + idx.offset)
        return Idx(env.get(idx.base, idx.base), idx.offset)

    def sub_val(v: int, env: dict) -> int:
        return env.get(v, v)

    def emit(seq: tuple[Instr, ...], env: dict, consts: dict, top: bool) -> None:
        for ins in seq:
            op, a = ins.op, ins.args
            if op == "for-range":
                lo, hi = a
                for it in range(lo, hi):
                    inner_env = dict(env)
                    inner_consts = dict(consts)
                    inner_consts[ins.dest] = it
                    # the loop variable may also be used as an ordinary i32 value
                    cid = fresh()
                    out.append(Instr("const", cid, (I32, it)))
                    inner_env[ins.dest] = cid
                    emit(ins.body, inner_env, inner_consts, False)
                continue
            if op == "sum-range":
                lo, hi, var, yielded, t = a
                acc = fresh()
                out.append(Instr("const", acc, (t, 0.0 if t == F32 else 0)))
                for it in range(lo, hi):
                    inner_env = dict(env)
                    inner_consts = dict(consts)
                    inner_consts[var] = it
                    cid = fresh()
                    out.append(Instr("const", cid, (I32, it)))
                    inner_env[var] = cid
                    emit(ins.body, inner_env, inner_consts, False)
                    # top-level ids survive unrolling, so the last add takes the declared id
                    nxt = ins.dest if top and it == hi - 1 else fresh()
                    out.append(Instr("add", nxt, (acc, inner_env.get(yielded, yielded))))
                    acc = nxt
                if not top:
                    env[ins.dest] = acc
                continue
            if op == "load-field":
                na = (sub_idx(a[0], env, consts),)
            elif op == "store-field":
                na = (sub_idx(a[0], env, consts), sub_val(a[1], env))
            elif op in ("load-context", "context-increment"):
                na = (a[0], tuple(sub_idx(i, env, consts) for i in a[1]))
            elif op in ("context-add", "store-context"):
                na = (a[0], tuple(sub_idx(i, env, consts) for i in a[1]), sub_val(a[2], env))
            elif op in ("const",):
                na = a
            elif op == "cmp":
                na = (a[0], sub_val(a[1], env), sub_val(a[2], env))
            elif op == "agg-add":
                na = (a[0], sub_val(a[1], env))
            else:
                na = tuple(sub_val(x, env) for x in a)
            dest = ins.dest
            if dest is not None and not top:
                new = fresh()
                env[dest] = new
                dest = new
            out.append(Instr(op, dest, na))

    emit(body, {}, {}, True)
    return tuple(out)


class _Checker:
    def __init__(self, prog: UdfProgram):
        self.p = prog
        self.seen_ids: set[int] = set()
        self.ctx_used: set[str] = set()
        self.ctx_written: set[str] = set()
        self.returns = 0

    def fail(self, msg: str, ins: Instr | None = None):
        raise ContractViolation(msg, ins, self.p.name)

    def run(self) -> None:
        p = self.p
        if p.kind not in KINDS:
            self.fail(f"unknown UDF kind {p.kind!r}")
        for t in (*p.in_types, *p.out_types, *p.agg_types):
            if t not in (F32, I32):
                self.fail(f"tuple and aggregate fields must be f32 or i32, got {t!r}")
        for name, spec in p.context.items():
            if spec.dtype not in (F32, I32) or any(d <= 0 for d in spec.shape):
                self.fail(f"bad context declaration {name}: {spec}")
        if p.kind in ("update", "invariant") and p.in_types:
            self.fail(f"{p.kind} UDFs take no input tuple")
        if p.kind in ("map", "flatmap") and not p.out_types:
            self.fail(f"{p.kind} UDF must declare an output tuple")
        if p.kind not in ("map", "flatmap") and p.out_types:
            self.fail(f"{p.kind} UDF cannot declare an output tuple")
        if p.kind != "reduce-body" and p.agg_types:
            self.fail("only reduce bodies declare aggregate outputs")

        self.block(p.body, {}, {}, top=True)

        undeclared = self.ctx_used - set(p.context)
        if undeclared:
            self.fail(f"context keys used but not declared: {sorted(undeclared)}")
        unused = set(p.context) - self.ctx_used
        if unused:
            self.fail(f"context keys declared but never accessed: {sorted(unused)}")
        if self.ctx_written != set(p.writes):
            self.fail(
                f"declared context writes {sorted(p.writes)} do not match "
                f"writes in body {sorted(self.ctx_written)}"
            )
        if p.kind in ("predicate", "invariant", "key") and self.returns != 1:
            self.fail(f"{p.kind} UDF must end with exactly one return")
        self.check_flat()

    def check_flat(self) -> None:
        p = self.p
        flat = unroll(p.body)
        if p.kind == "map":
            stored = [i.args[0].offset for i in flat if i.op == "store-field"]
            for j in range(len(p.out_types)):
                n = stored.count(j)
                if n != 1:
                    self.fail(f"map must store output field {j} exactly once (found {n})")
        if p.kind == "flatmap":
            emits = [k for k, i in enumerate(flat) if i.op == "emit-tuple"]
            if not emits:
                self.fail("flatmap must emit at least one tuple")
            before = {i.args[0].offset for i in flat[: emits[0]] if i.op == "store-field"}
            missing = set(range(len(p.out_types))) - before
            if missing:
                self.fail(f"flatmap emits before storing output fields {sorted(missing)}")
        if p.kind == "reduce-body":
            slots = {i.args[0] for i in flat if i.op == "agg-add"}
            if slots != set(range(len(p.agg_types))):
                self.fail(f"aggregate slots used {sorted(slots)} do not cover declared {len(p.agg_types)}")

    def index_range(self, idx: Idx, loops: dict, types: dict, ins: Instr, what: str) -> tuple[int, int] | None:
        """(min, max) of a static index, or None when the index is data dependent."""
        if idx.base is None:
            return idx.offset, idx.offset
        if idx.base in loops:
            lo, hi = loops[idx.base]
            return lo + idx.offset, hi - 1 + idx.offset
        if idx.base not in types:
            self.fail(f"{what} index uses undefined value %{idx.base}", ins)
        if types[idx.base] != I32:
            self.fail(f"{what} index must be i32", ins)
        return None

    def use(self, v, types: dict, ins: Instr) -> str:
        if not isinstance(v, int) or v not in types:
            self.fail(f"use of undefined value %{v}", ins)
        return types[v]

    def define(self, ins: Instr, t: str, types: dict) -> None:
        if ins.dest is None:
            self.fail("instruction must define a value", ins)
        if ins.dest in self.seen_ids:
            self.fail(f"value %{ins.dest} defined twice", ins)
        self.seen_ids.add(ins.dest)
        types[ins.dest] = t

    def block(self, body, types: dict, loops: dict, top: bool) -> None:
        p = self.p
        for pos, ins in enumerate(body):
            op, a = ins.op, ins.args
            if op not in OPCODES:
                self.fail(f"unknown opcode {op!r}", ins)
            allowed = _PERMITTED.get(op)
            if allowed is not None and p.kind not in allowed:
                self.fail(f"{op} is not permitted in a {p.kind} UDF", ins)
            if op in ("return-bool", "return-key"):
                if not top or pos != len(body) - 1:
                    self.fail(f"{op} must be the final top-level instruction", ins)
                self.returns += 1
            if op not in LOOPS and ins.body:
                self.fail("only loops carry a body", ins)

            if op == "const":
                t, value = a
                if t not in (F32, I32, BOOL):
                    self.fail(f"bad constant type {t!r}", ins)
                self.define(ins, t, types)
            elif op == "load-field":
                lo_hi = self.index_range(a[0], loops, types, ins, "field")
                if lo_hi is None:
                    self.fail("field index must be a constant or loop variable", ins)
                lo, hi = lo_hi
                if lo < 0 or hi >= len(p.in_types):
                    self.fail(f"field index out of range for arity {len(p.in_types)}", ins)
                ts = {p.in_types[k] for k in range(lo, hi + 1)}
                if len(ts) != 1:
                    self.fail("loop-indexed field load spans fields of different types", ins)
                self.define(ins, ts.pop(), types)
            elif op == "store-field":
                lo_hi = self.index_range(a[0], loops, types, ins, "field")
                if lo_hi is None:
                    self.fail("field index must be a constant or loop variable", ins)
                lo, hi = lo_hi
                if lo < 0 or hi >= len(p.out_types):
                    self.fail(f"output field index out of range for arity {len(p.out_types)}", ins)
                vt = self.use(a[1], types, ins)
                for k in range(lo, hi + 1):
                    if p.out_types[k] != vt:
                        self.fail(f"store of {vt} into {p.out_types[k]} field {k}", ins)
            elif op in ("load-context", "context-add", "context-increment", "store-context"):
                name = a[0]
                self.ctx_used.add(name)
                if name not in p.context:
                    self.fail(f"context key {name!r} not declared", ins)
                spec = p.context[name]
                idxs = a[1]
                if len(idxs) != len(spec.shape):
                    self.fail(f"context {name!r} has rank {len(spec.shape)}, got {len(idxs)} indices", ins)
                for dim, idx in zip(spec.shape, idxs):
                    rng = self.index_range(idx, loops, types, ins, "context")
                    if rng is None:
                        if p.kind not in _DATA_INDEX_KINDS:
                            self.fail(f"data-dependent context index not permitted in a {p.kind} UDF", ins)
                    elif rng[0] < 0 or rng[1] >= dim:
                        self.fail(f"context index out of range for {name!r}{list(spec.shape)}", ins)
                if op == "load-context":
                    self.define(ins, spec.dtype, types)
                else:
                    self.ctx_written.add(name)
                    if op in ("context-add", "store-context"):
                        vt = self.use(a[2], types, ins)
                        if vt != spec.dtype:
                            self.fail(f"{op} of {vt} into {spec.dtype} context {name!r}", ins)
            elif op in ARITH:
                ta, tb = self.use(a[0], types, ins), self.use(a[1], types, ins)
                if ta != tb or ta not in (F32, I32):
                    self.fail(f"{op} needs two operands of one numeric type, got {ta}, {tb}", ins)
                self.define(ins, ta, types)
            elif op in UNARY_FLOAT:
                if self.use(a[0], types, ins) != F32:
                    self.fail(f"{op} needs an f32 operand", ins)
                self.define(ins, F32, types)
            elif op == "to-float":
                if self.use(a[0], types, ins) != I32:
                    self.fail("to-float needs an i32 operand", ins)
                self.define(ins, F32, types)
            elif op == "min-select":
                if not a:
                    self.fail("min-select needs operands", ins)
                ts = {self.use(v, types, ins) for v in a}
                if len(ts) != 1 or ts.pop() not in (F32, I32):
                    self.fail("min-select operands must share one numeric type", ins)
                self.define(ins, I32, types)
            elif op == "cmp":
                pred = a[0]
                if pred not in CMP_PREDICATES:
                    self.fail(f"unknown comparison {pred!r}", ins)
                ta, tb = self.use(a[1], types, ins), self.use(a[2], types, ins)
                if ta != tb or (ta == BOOL and pred not in ("eq", "ne")):
                    self.fail(f"cmp operands must share a type, got {ta}, {tb}", ins)
                self.define(ins, BOOL, types)
            elif op == "select":
                tc = self.use(a[0], types, ins)
                ta, tb = self.use(a[1], types, ins), self.use(a[2], types, ins)
                if tc != BOOL or ta != tb:
                    self.fail("select needs a bool condition and two operands of one type", ins)
                self.define(ins, ta, types)
            elif op == "for-range":
                lo, hi = a
                if not (isinstance(lo, int) and isinstance(hi, int)) or hi < lo:
                    self.fail("for-range bounds must be constant integers with lo <= hi", ins)
                self.define(ins, I32, types)
                inner = dict(types)
                inner_loops = dict(loops)
                inner_loops[ins.dest] = (lo, hi)
                if hi == lo:
                    # empty loop: body is still type-checked with the loop var at lo
                    inner_loops[ins.dest] = (lo, lo + 1)
                self.block(ins.body, inner, inner_loops, top=False)
            elif op == "sum-range":
                if len(a) != 5:
                    self.fail("sum-range takes (lo, hi, var, yielded, type)", ins)
                lo, hi, var, yielded, t = a
                if not (isinstance(lo, int) and isinstance(hi, int)) or hi <= lo:
                    self.fail("sum-range bounds must be constant integers with lo < hi", ins)
                if t not in (F32, I32):
                    self.fail(f"sum-range type must be f32 or i32, got {t!r}", ins)
                if var in self.seen_ids:
                    self.fail(f"value %{var} defined twice", ins)
                self.seen_ids.add(var)
                inner = dict(types)
                inner[var] = I32
                inner_loops = dict(loops)
                inner_loops[var] = (lo, hi)
                self.block(ins.body, inner, inner_loops, top=False)
                if yielded not in inner or yielded == var or yielded in types:
                    self.fail(f"sum-range must yield a value defined in its body, got %{yielded}", ins)
                if inner[yielded] != t:
                    self.fail(f"sum-range of {t} yields a {inner[yielded]}", ins)
                self.define(ins, t, types)
            elif op == "emit-tuple":
                for v in a:
                    if self.use(v, types, ins) != BOOL:
                        self.fail("emit-tuple guard must be bool", ins)
            elif op == "return-bool":
                if self.use(a[0], types, ins) != BOOL:
                    self.fail("return-bool needs a bool", ins)
            elif op == "return-key":
                if self.use(a[0], types, ins) != I32:
                    self.fail("return-key needs an i32", ins)
            elif op == "agg-add":
                slot, v = a
                if not (0 <= slot < len(p.agg_types)):
                    self.fail(f"aggregate slot {slot} not declared", ins)
                vt = self.use(v, types, ins)
                if vt != p.agg_types[slot]:
                    self.fail(f"agg-add of {vt} into {p.agg_types[slot]} slot", ins)


def validate(p: UdfProgram) -> UdfProgram:
    """Check ``p`` against its contract class and the typing rules.

    Returns ``p`` unchanged; raises :class:`ContractViolation` naming the
    offending instruction otherwise.
    """
    if p.__dict__.get("_validated"):
        return p
    _Checker(p).run()
    p.__dict__["_validated"] = True
    return p


def is_pass_through(p: UdfProgram, out_field: int) -> bool:
    """True if map ``p`` copies input field ``out_field`` unchanged to the same output position."""
    if p.kind != "map" or out_field >= len(p.in_types):
        return False
    defs = {i.dest: i for i in p.flat if i.dest is not None}
    for ins in p.flat:
        if ins.op == "store-field" and ins.args[0].offset == out_field:
            src = defs.get(ins.args[1])
            return src is not None and src.op == "load-field" and src.args[0].offset == out_field
    return False
