"""Scalar reference interpreter: strict sequential evaluation of one UDF call.

Every execution strategy is checked against this module, so it favours
obviousness over speed. Arithmetic happens on numpy float32/int32 scalars so
results match the compiled kernels bit for bit on element-wise operations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..context import F32, I32, Context, UpdateSet
from .program import Instr, UdfProgram, validate

_NP = {F32: np.float32, I32: np.int32, "bool": np.bool_}


@dataclass
class ReduceEffect:
    """What one reduce-body call contributes: per-slot aggregate deltas and context deltas."""

    agg: list[tuple[int, object]]
    updates: UpdateSet


class _Return(Exception):
    def __init__(self, value):
        self.value = value


def int_div(a, b):
    """Floor division with x // 0 == 0, matching the generated kernels."""
    if b == 0:
        return np.int32(0)
    return np.int32(np.int64(a) // np.int64(b))


def argmin_first(values: Sequence) -> int:
    """Index of the smallest value; ties resolve to the lowest index."""
    best, m = 0, values[0]
    for i in range(1, len(values)):
        if values[i] < m:
            best, m = i, values[i]
    return best


_CMP = {
    "lt": lambda a, b: a < b,
    "le": lambda a, b: a <= b,
    "eq": lambda a, b: a == b,
    "ne": lambda a, b: a != b,
    "ge": lambda a, b: a >= b,
    "gt": lambda a, b: a > b,
}


class _Frame:
    def __init__(self, p: UdfProgram, t, ctx: Context | None):
        self.p = p
        self.t = t
        self.ctx = ctx
        self.env: dict[int, object] = {}
        self.loopvars: dict[int, int] = {}
        self.out = [None] * len(p.out_types)
        self.emitted: list[tuple] = []
        self.agg: list[tuple[int, object]] = []
        self.updates = UpdateSet()

    def idx(self, i) -> int:
        if i.base is None:
            return i.offset
        if i.base in self.loopvars:
            return self.loopvars[i.base] + i.offset
        return int(self.env[i.base]) + i.offset

    def ctx_index(self, name: str, idxs) -> tuple[int, ...]:
        index = tuple(self.idx(i) for i in idxs)
        shape = self.p.context[name].shape
        for k, d in zip(index, shape):
            if not 0 <= k < d:
                raise IndexError(f"{self.p.name}: context index {index} out of range for {name}{list(shape)}")
        return index

    def run(self, body: Sequence[Instr]) -> None:
        env = self.env
        for ins in body:
            op, a = ins.op, ins.args
            if op == "const":
                env[ins.dest] = _NP[a[0]](a[1])
            elif op == "load-field":
                env[ins.dest] = self.t[self.idx(a[0])]
            elif op == "store-field":
                self.out[self.idx(a[0])] = env[a[1]]
            elif op == "load-context":
                index = self.ctx_index(a[0], a[1])
                env[ins.dest] = self.ctx[a[0]][index]
            elif op == "context-add":
                index = self.ctx_index(a[0], a[1])
                if self.p.kind == "reduce-body":
                    self.updates.add(a[0], index, env[a[2]])
                else:
                    arr = self.ctx[a[0]]
                    arr[index] = arr[index] + env[a[2]]
            elif op == "context-increment":
                index = self.ctx_index(a[0], a[1])
                if self.p.kind == "reduce-body":
                    self.updates.add(a[0], index, 1, op="increment")
                else:
                    arr = self.ctx[a[0]]
                    arr[index] = arr[index] + arr.dtype.type(1)
            elif op == "store-context":
                index = self.ctx_index(a[0], a[1])
                self.ctx[a[0]][index] = env[a[2]]
            elif op == "add":
                env[ins.dest] = env[a[0]] + env[a[1]]
            elif op == "sub":
                env[ins.dest] = env[a[0]] - env[a[1]]
            elif op == "mul":
                env[ins.dest] = env[a[0]] * env[a[1]]
            elif op == "div":
                x, y = env[a[0]], env[a[1]]
                env[ins.dest] = int_div(x, y) if isinstance(x, np.int32) else x / y
            elif op == "sqrt":
                env[ins.dest] = np.sqrt(env[a[0]])
            elif op == "exp":
                env[ins.dest] = np.exp(env[a[0]])
            elif op == "log":
                env[ins.dest] = np.log(env[a[0]])
            elif op == "to-float":
                env[ins.dest] = np.float32(env[a[0]])
            elif op == "min-select":
                env[ins.dest] = np.int32(argmin_first([env[v] for v in a]))
            elif op == "cmp":
                env[ins.dest] = np.bool_(_CMP[a[0]](env[a[1]], env[a[2]]))
            elif op == "select":
                env[ins.dest] = env[a[1]] if env[a[0]] else env[a[2]]
            elif op == "for-range":
                for it in range(a[0], a[1]):
                    self.loopvars[ins.dest] = it
                    env[ins.dest] = np.int32(it)
                    self.run(ins.body)
                self.loopvars.pop(ins.dest, None)
            elif op == "sum-range":
                lo, hi, var, yielded, t = a
                acc = _NP[t](0)
                for it in range(lo, hi):
                    self.loopvars[var] = it
                    env[var] = np.int32(it)
                    self.run(ins.body)
                    acc = _NP[t](acc + env[yielded])
                self.loopvars.pop(var, None)
                env[ins.dest] = acc
            elif op == "emit-tuple":
                if not a or env[a[0]]:
                    self.emitted.append(tuple(self.out))
            elif op == "return-bool":
                raise _Return(bool(env[a[0]]))
            elif op == "return-key":
                raise _Return(int(env[a[0]]))
            elif op == "agg-add":
                self.agg.append((a[0], env[a[1]]))
            else:  # pragma: no cover - validate() rejects unknown opcodes
                raise ValueError(op)


def interpret(p: UdfProgram, t: Sequence = (), ctx: Context | None = None):
    """Evaluate ``p`` on tuple ``t`` with context ``ctx``.

    Returns, by kind: predicate/invariant -> bool; key -> int; map -> tuple;
    flatmap -> list of tuples; reduce-body -> :class:`ReduceEffect`;
    update -> ``ctx`` (mutated in place). Invariants may bump counters in
    ``ctx``; every other kind leaves ``ctx`` untouched.
    """
    validate(p)
    if len(t) != len(p.in_types):
        raise ValueError(f"{p.name}: expected {len(p.in_types)} fields, got {len(t)}")
    t = tuple(_NP[ty](v) for ty, v in zip(p.in_types, t))
    frame = _Frame(p, t, ctx)
    with np.errstate(all="ignore"):
        try:
            frame.run(p.body)
        except _Return as r:
            return r.value
    if p.kind == "map":
        return tuple(frame.out)
    if p.kind == "flatmap":
        return frame.emitted
    if p.kind == "reduce-body":
        return ReduceEffect(frame.agg, frame.updates)
    if p.kind == "update":
        return ctx
    raise ValueError(f"{p.name}: {p.kind} UDF finished without returning")
