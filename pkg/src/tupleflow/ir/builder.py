"""Programmatic construction of UdfPrograms.

Example::

    b = Builder("double", "map", in_types=[F32], out_types=[F32])
    x = b.field(0)
    b.store(0, b.mul(x, b.const(2.0)))
    prog = b.build()
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from ..context import BOOL, F32, I32, Context, ContextSpec
from .program import Idx, Instr, UdfProgram, validate


@dataclass(frozen=True)
class V:
    """Handle to an SSA value; ``V + k`` forms an index expression."""

    id: int
    offset: int = 0

    def __add__(self, k: int) -> "V":
        return V(self.id, self.offset + int(k))

    def __sub__(self, k: int) -> "V":
        return V(self.id, self.offset - int(k))


class Builder:
    def __init__(
        self,
        name: str,
        kind: str,
        in_types: Sequence[str] = (),
        out_types: Sequence[str] = (),
        agg_types: Sequence[str] = (),
        context: Mapping[str, ContextSpec] | Context | None = None,
    ):
        self.name = name
        self.kind = kind
        self.in_types = tuple(in_types)
        self.out_types = tuple(out_types)
        self.agg_types = tuple(agg_types)
        if isinstance(context, Context):
            context = context.schema
        self._schema = dict(context or {})
        self._used: dict[str, ContextSpec] = {}
        self._writes: set[str] = set()
        self._stack: list[list[Instr]] = [[]]
        self._next = 0

    def _new(self) -> int:
        self._next += 1
        return self._next - 1

    def _emit(self, op: str, args: tuple, value: bool = True) -> V | None:
        dest = self._new() if value else None
        self._stack[-1].append(Instr(op, dest, args))
        return V(dest) if value else None

    @staticmethod
    def _val(v: V) -> int:
        if v.offset:
            raise ValueError("offset index expressions are only valid as indices")
        return v.id

    @staticmethod
    def _idx(i) -> Idx:
        if isinstance(i, V):
            return Idx(i.id, i.offset)
        return Idx(None, int(i))

    def _ctx(self, name: str, write: bool = False) -> None:
        if name not in self._schema:
            raise KeyError(f"context key {name!r} is not in the declared schema")
        self._used[name] = self._schema[name]
        if write:
            self._writes.add(name)

    # values
    def const(self, value, t: str | None = None) -> V:
        if t is None:
            t = BOOL if isinstance(value, bool) else I32 if isinstance(value, int) else F32
        return self._emit("const", (t, value))

    def field(self, i) -> V:
        return self._emit("load-field", (self._idx(i),))

    def store(self, i, v: V) -> None:
        self._emit("store-field", (self._idx(i), self._val(v)), value=False)

    def copy_fields(self, n: int, start: int = 0) -> None:
        """Copy input fields [start, start+n) to the same output positions."""
        for j in range(start, start + n):
            self.store(j, self.field(j))

    def ctx(self, name: str, *idx) -> V:
        self._ctx(name)
        return self._emit("load-context", (name, tuple(self._idx(i) for i in idx)))

    def ctx_add(self, name: str, idx: Sequence, v: V) -> None:
        self._ctx(name, write=True)
        self._emit("context-add", (name, tuple(self._idx(i) for i in idx), self._val(v)), value=False)

    def ctx_inc(self, name: str, *idx) -> None:
        self._ctx(name, write=True)
        self._emit("context-increment", (name, tuple(self._idx(i) for i in idx)), value=False)

    def ctx_store(self, name: str, idx: Sequence, v: V) -> None:
        self._ctx(name, write=True)
        self._emit("store-context", (name, tuple(self._idx(i) for i in idx), self._val(v)), value=False)

    def _bin(self, op: str, a: V, b: V) -> V:
        return self._emit(op, (self._val(a), self._val(b)))

    def add(self, a: V, b: V) -> V:
        return self._bin("add", a, b)

    def sub(self, a: V, b: V) -> V:
        return self._bin("sub", a, b)

    def mul(self, a: V, b: V) -> V:
        return self._bin("mul", a, b)

    def div(self, a: V, b: V) -> V:
        return self._bin("div", a, b)

    def sqrt(self, a: V) -> V:
        return self._emit("sqrt", (self._val(a),))

    def exp(self, a: V) -> V:
        return self._emit("exp", (self._val(a),))

    def log(self, a: V) -> V:
        return self._emit("log", (self._val(a),))

    def to_float(self, a: V) -> V:
        return self._emit("to-float", (self._val(a),))

    def min_select(self, *vals: V) -> V:
        return self._emit("min-select", tuple(self._val(v) for v in vals))

    def cmp(self, pred: str, a: V, b: V) -> V:
        return self._emit("cmp", (pred, self._val(a), self._val(b)))

    def select(self, c: V, a: V, b: V) -> V:
        return self._emit("select", (self._val(c), self._val(a), self._val(b)))

    def sum(self, vals: Sequence[V]) -> V:
        acc = vals[0]
        for v in vals[1:]:
            acc = self.add(acc, v)
        return acc

    @contextmanager
    def loop(self, lo: int, hi: int | None = None):
        if hi is None:
            lo, hi = 0, lo
        var = self._new()
        self._stack.append([])
        try:
            yield V(var)
        finally:
            body = tuple(self._stack.pop())
            self._stack[-1].append(Instr("for-range", var, (int(lo), int(hi)), body))

    def sum_range(self, lo: int, hi: int | None = None, body: Callable[[V], V] | None = None,
                  t: str = F32) -> V:
        """Sum of ``body(j)`` for j in [lo, hi), as one loop instruction."""
        if hi is None:
            lo, hi = 0, lo
        var = self._new()
        self._stack.append([])
        try:
            y = body(V(var))
        finally:
            inner = tuple(self._stack.pop())
        dest = self._new()
        self._stack[-1].append(Instr("sum-range", dest, (int(lo), int(hi), var, self._val(y), t), inner))
        return V(dest)

    # terminators and effects
    def emit(self, cond: V | None = None) -> None:
        self._emit("emit-tuple", () if cond is None else (self._val(cond),), value=False)

    def ret(self, v: V) -> None:
        self._emit("return-bool", (self._val(v),), value=False)

    def ret_key(self, v: V) -> None:
        self._emit("return-key", (self._val(v),), value=False)

    def agg(self, slot: int, v: V) -> None:
        self._emit("agg-add", (int(slot), self._val(v)), value=False)

    def build(self) -> UdfProgram:
        if len(self._stack) != 1:
            raise RuntimeError("unclosed loop")
        prog = UdfProgram(
            name=self.name,
            kind=self.kind,
            body=tuple(self._stack[0]),
            in_types=self.in_types,
            out_types=self.out_types,
            agg_types=self.agg_types,
            context=dict(self._used),
            writes=frozenset(self._writes),
        )
        return validate(prog)
