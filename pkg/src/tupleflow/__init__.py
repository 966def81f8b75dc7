"""Embedded analytics engine: TupleSet algebra, UDF IR, analyzer, strategy synthesis and a pull-based runtime."""

from .algebra import Node, Workflow, WorkflowError
from .analyzer import FunctionStats, HardwareProfile, analyze, compute_load_cycles
from .context import F32, I32, Context, ContextSpec, UpdateSet
from .ir import Builder, UdfProgram, interpret, parse_program
from .reference import reference_evaluate
from .relation import Relation, TupleSet

__version__ = "0.1.0"

__all__ = [
    "Node", "Workflow", "WorkflowError", "FunctionStats", "HardwareProfile", "analyze",
    "compute_load_cycles", "F32", "I32", "Context", "ContextSpec", "UpdateSet", "Builder",
    "UdfProgram", "interpret", "parse_program", "reference_evaluate", "Relation", "TupleSet",
]
