"""Closed, typed expression IR for λ-functions plus its reference interpreter."""

from .builder import Builder, V
from .interp import ReduceEffect, interpret
from .program import (
    KINDS,
    LOOPS,
    OPCODES,
    ContractViolation,
    Idx,
    Instr,
    UdfProgram,
    is_pass_through,
    loop_var,
    loop_vars,
    unroll,
    validate,
    walk,
)
from .text import IRSyntaxError, format_program, parse_program, parse_programs

__all__ = [
    "Builder", "V", "ReduceEffect", "interpret", "KINDS", "LOOPS", "OPCODES",
    "ContractViolation", "Idx", "Instr", "UdfProgram", "is_pass_through", "loop_var", "loop_vars",
    "unroll", "validate", "walk", "IRSyntaxError", "format_program", "parse_program",
    "parse_programs",
]
