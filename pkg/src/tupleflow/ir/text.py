"""Textual IR: one instruction per line, ``%id = opcode operands``.

A file holds one or more programs::

    udf distance map
    in f32 f32
    out f32 f32 f32 f32 f32
    ctx k f32[3,2]
      %0 = load-field 0
      store-field 0 %0
      for %2 = 0..3
        %3 = load-context k %2 0
        ...
      end

Header lines (``in``, ``out``, ``agg``, ``ctx``, ``writes``) precede the body.
``#`` starts a comment.
"""

from __future__ import annotations

import re

from ..context import ContextSpec
from .program import ARITH, UNARY_FLOAT, Idx, Instr, UdfProgram, validate


class IRSyntaxError(ValueError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


_IDX = re.compile(r"^%(\d+)([+-]\d+)?$")
_VAL = re.compile(r"^%(\d+)$")
_CTX = re.compile(r"^(\w+)\[([\d,\s]*)\]$")
_FOR = re.compile(r"^for\s+%(\d+)\s*=\s*(-?\d+)\.\.(-?\d+)$")
_SUM = re.compile(r"^%(\d+)\s*=\s*sum-range\s+(\w+)\s+%(\d+)\s*=\s*(-?\d+)\.\.(-?\d+)\s+yield\s+%(\d+)$")


def _fmt_val(v: int) -> str:
    return f"%{v}"


def _fmt_const(t: str, value) -> str:
    if t == "bool":
        return "true" if value else "false"
    return repr(float(value)) if t == "f32" else str(int(value))


def format_instr(ins: Instr, indent: int = 0) -> str:
    pad = "  " * indent
    op, a = ins.op, ins.args
    lhs = f"%{ins.dest} = " if ins.dest is not None and op not in ("for-range", "sum-range") else ""
    if op == "const":
        rest = f"{a[0]} {_fmt_const(a[0], a[1])}"
    elif op == "load-field":
        rest = str(a[0])
    elif op == "store-field":
        rest = f"{a[0]} {_fmt_val(a[1])}"
    elif op in ("load-context", "context-increment"):
        rest = " ".join([a[0], *map(str, a[1])])
    elif op in ("context-add", "store-context"):
        rest = " ".join([a[0], *map(str, a[1]), _fmt_val(a[2])])
    elif op == "cmp":
        rest = f"{a[0]} {_fmt_val(a[1])} {_fmt_val(a[2])}"
    elif op == "agg-add":
        rest = f"{a[0]} {_fmt_val(a[1])}"
    elif op == "for-range":
        lines = [f"{pad}for %{ins.dest} = {a[0]}..{a[1]}"]
        lines += [format_instr(i, indent + 1) for i in ins.body]
        lines.append(f"{pad}end")
        return "\n".join(lines)
    elif op == "sum-range":
        lo, hi, var, yielded, t = a
        lines = [f"{pad}%{ins.dest} = sum-range {t} %{var} = {lo}..{hi} yield %{yielded}"]
        lines += [format_instr(i, indent + 1) for i in ins.body]
        lines.append(f"{pad}end")
        return "\n".join(lines)
    else:
        rest = " ".join(_fmt_val(v) for v in a)
    return f"{pad}{lhs}{op} {rest}".rstrip()


def format_program(p: UdfProgram) -> str:
    lines = [f"udf {p.name} {p.kind}"]
    if p.in_types:
        lines.append("in " + " ".join(p.in_types))
    if p.out_types:
        lines.append("out " + " ".join(p.out_types))
    if p.agg_types:
        lines.append("agg " + " ".join(p.agg_types))
    for name, spec in p.context.items():
        lines.append(f"ctx {name} {spec.dtype}[{','.join(map(str, spec.shape))}]")
    if p.writes:
        lines.append("writes " + " ".join(sorted(p.writes)))
    lines += [format_instr(i, 1) for i in p.body]
    return "\n".join(lines) + "\n"


def _parse_idx(tok: str, line: int) -> Idx:
    m = _IDX.match(tok)
    if m:
        return Idx(int(m.group(1)), int(m.group(2) or 0))
    try:
        return Idx(None, int(tok))
    except ValueError:
        raise IRSyntaxError(f"bad index operand {tok!r}", line) from None


def _parse_val(tok: str, line: int) -> int:
    m = _VAL.match(tok)
    if not m:
        raise IRSyntaxError(f"expected a value operand like %3, got {tok!r}", line)
    return int(m.group(1))


def _parse_const(t: str, tok: str, line: int):
    try:
        if t == "bool":
            if tok not in ("true", "false"):
                raise ValueError
            return tok == "true"
        if t == "f32":
            return float(tok)
        if t == "i32":
            return int(tok)
    except ValueError:
        pass
    raise IRSyntaxError(f"bad {t} constant {tok!r}", line)


def _parse_instr(text: str, line: int) -> Instr:
    dest = None
    if "=" in text.split()[0] or (len(text.split()) > 1 and text.split()[1] == "="):
        lhs, _, text = text.partition("=")
        dest = _parse_val(lhs.strip(), line)
    toks = text.split()
    if not toks:
        raise IRSyntaxError("missing opcode", line)
    op, rest = toks[0], toks[1:]
    if op == "const":
        if len(rest) != 2:
            raise IRSyntaxError("const takes a type and a value", line)
        args = (rest[0], _parse_const(rest[0], rest[1], line))
    elif op == "load-field":
        args = (_parse_idx(rest[0], line),)
    elif op == "store-field":
        args = (_parse_idx(rest[0], line), _parse_val(rest[1], line))
    elif op in ("load-context", "context-increment"):
        args = (rest[0], tuple(_parse_idx(t, line) for t in rest[1:]))
    elif op in ("context-add", "store-context"):
        args = (rest[0], tuple(_parse_idx(t, line) for t in rest[1:-1]), _parse_val(rest[-1], line))
    elif op == "cmp":
        args = (rest[0], _parse_val(rest[1], line), _parse_val(rest[2], line))
    elif op == "agg-add":
        args = (int(rest[0]), _parse_val(rest[1], line))
    elif op in (*ARITH, *UNARY_FLOAT, "to-float", "min-select", "select", "emit-tuple", "return-bool", "return-key"):
        args = tuple(_parse_val(t, line) for t in rest)
    else:
        raise IRSyntaxError(f"unknown opcode {op!r}", line)
    return Instr(op, dest, args)


def parse_programs(source: str) -> list[UdfProgram]:
    """Parse every ``udf`` block in ``source`` and validate each program."""
    programs: list[UdfProgram] = []
    header: dict | None = None
    # open blocks: (body, constructor of the closing loop instruction)
    stack: list[tuple[list[Instr], object]] = []

    def finish(lineno: int):
        if header is None:
            return
        if len(stack) != 1:
            raise IRSyntaxError("unterminated loop", lineno)
        prog = UdfProgram(
            name=header["name"],
            kind=header["kind"],
            body=tuple(stack[0][0]),
            in_types=tuple(header.get("in", ())),
            out_types=tuple(header.get("out", ())),
            agg_types=tuple(header.get("agg", ())),
            context=header.get("ctx", {}),
            writes=frozenset(header.get("writes", ())),
        )
        programs.append(validate(prog))

    lineno = 0
    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        toks = text.split()
        if toks[0] == "udf":
            finish(lineno)
            if len(toks) != 3:
                raise IRSyntaxError("expected `udf NAME KIND`", lineno)
            header = {"name": toks[1], "kind": toks[2]}
            stack = [([], None)]
            continue
        if header is None:
            raise IRSyntaxError("instruction outside a udf block", lineno)
        if toks[0] in ("in", "out", "agg", "writes") and not stack[0][0] and len(stack) == 1:
            header[toks[0]] = toks[1:]
            continue
        if toks[0] == "ctx" and not stack[0][0] and len(stack) == 1:
            m = _CTX.match(toks[2]) if len(toks) == 3 else None
            if m:
                dims = tuple(int(d) for d in m.group(2).replace(" ", "").split(",") if d)
                spec = ContextSpec(m.group(1), dims)
            elif len(toks) == 3:
                spec = ContextSpec(toks[2], ())
            else:
                raise IRSyntaxError("expected `ctx NAME TYPE[dims]`", lineno)
            header.setdefault("ctx", {})[toks[1]] = spec
            continue
        m = _FOR.match(text)
        if m:
            var, bounds = int(m.group(1)), (int(m.group(2)), int(m.group(3)))
            stack.append(([], lambda body, v=var, b=bounds: Instr("for-range", v, b, body)))
            continue
        m = _SUM.match(text)
        if m:
            d, t, var, lo, hi, y = m.groups()
            args = (int(lo), int(hi), int(var), int(y), t)
            stack.append(([], lambda body, d=int(d), a=args: Instr("sum-range", d, a, body)))
            continue
        if text == "end":
            if len(stack) == 1:
                raise IRSyntaxError("`end` without matching loop", lineno)
            body, close = stack.pop()
            stack[-1][0].append(close(tuple(body)))
            continue
        stack[-1][0].append(_parse_instr(text, lineno))
    finish(lineno)
    return programs


def parse_program(source: str) -> UdfProgram:
    progs = parse_programs(source)
    if len(progs) != 1:
        raise IRSyntaxError(f"expected exactly one udf, found {len(progs)}", 1)
    return progs[0]
