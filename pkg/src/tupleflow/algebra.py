"""Logical workflow builder over the TupleSet operator algebra.

Operators only record nodes; nothing runs until :meth:`Workflow.evaluate`,
which hands the DAG to the planner, synthesizer and runtime.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

from .context import I32, ContextSpec
from .ir import ContractViolation, UdfProgram, is_pass_through, validate
from .relation import Schema, TupleSet

_ids = itertools.count()

# operator kind -> required UDF kind
UDF_KIND = {
    "selection": "predicate",
    "projection": "map",
    "theta_join": "predicate",
    "map": "map",
    "flatmap": "flatmap",
    "filter": "predicate",
    "reduce": "reduce-body",
    "update": "update",
    "loop": "invariant",
}
BINARY = ("cartesian", "theta_join", "union", "difference")
TUPLE_OPS = ("selection", "projection", "rename", "map", "flatmap", "filter")
BREAKERS = ("reduce", "update", "loop")


class WorkflowError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Node:
    kind: str
    inputs: tuple["Node", ...] = ()
    udf: UdfProgram | None = None
    key: UdfProgram | None = None
    schema: Schema = ()
    context_schema: dict[str, ContextSpec] = field(default_factory=dict)
    source: TupleSet | None = None
    order: tuple[int, ...] | None = None
    id: int = field(default_factory=lambda: next(_ids))

    @property
    def types(self) -> tuple[str, ...]:
        return tuple(t for _, t in self.schema)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.schema)

    @property
    def label(self) -> str:
        if self.udf is not None:
            return f"{self.kind}({self.udf.name})"
        return self.kind

    def ancestors(self) -> list["Node"]:
        """All nodes reachable upstream, in topological order (sources first)."""
        seen: dict[int, Node] = {}

        def visit(n: Node):
            if n.id in seen:
                return
            for i in n.inputs:
                visit(i)
            seen[n.id] = n

        visit(self)
        return list(seen.values())

    def __repr__(self) -> str:
        return f"Node({self.label}#{self.id})"


def _default_names(udf: UdfProgram, in_names: Sequence[str]) -> list[str]:
    return [
        in_names[j] if udf.kind == "map" and is_pass_through(udf, j) else f"c{j}"
        for j in range(len(udf.out_types))
    ]


def _check_context(udf: UdfProgram, schema: dict[str, ContextSpec], where: str) -> None:
    for name, spec in udf.context.items():
        if name not in schema:
            raise WorkflowError(f"{where}: UDF {udf.name!r} uses context key {name!r}, which is not declared")
        if schema[name] != spec:
            raise WorkflowError(
                f"{where}: UDF {udf.name!r} expects {name}: {spec}, context declares {schema[name]}"
            )


class Workflow:
    """Handle to the most recent node of a logical workflow DAG."""

    OPERATORS = (
        "selection", "projection", "rename", "cartesian", "theta_join", "union",
        "difference", "map", "flatmap", "filter", "reduce", "update", "loop",
    )

    def __init__(self, node: Node):
        self.node = node

    @classmethod
    def source(cls, ts: TupleSet) -> "Workflow":
        return cls(Node("source", schema=ts.relation.schema, context_schema=ts.context.schema, source=ts))

    @property
    def schema(self) -> Schema:
        return self.node.schema

    @property
    def context_schema(self) -> dict[str, ContextSpec]:
        return self.node.context_schema

    def _udf_node(self, kind: str, udf: UdfProgram, in_types, **kw) -> Node:
        validate(udf)
        need = UDF_KIND[kind]
        if udf.kind != need:
            raise ContractViolation(f"{kind} needs a {need} UDF, got a {udf.kind} UDF", program=udf.name)
        if tuple(udf.in_types) != tuple(in_types):
            raise WorkflowError(
                f"{kind}: UDF {udf.name!r} expects input types {list(udf.in_types)}, input has {list(in_types)}"
            )
        _check_context(udf, self.node.context_schema, kind)
        return Node(kind, inputs=(self.node,), udf=udf, context_schema=self.node.context_schema, **kw)

    def _no_context(self, kind: str, udf: UdfProgram) -> None:
        if udf.context:
            raise ContractViolation(
                f"{kind} is relational and cannot access Context (reads {sorted(udf.context)})",
                program=udf.name,
            )

    # relational
    def selection(self, pred: UdfProgram) -> "Workflow":
        self._no_context("selection", pred)
        return Workflow(self._udf_node("selection", pred, self.node.types, schema=self.node.schema))

    def projection(self, f: UdfProgram, names: Sequence[str] | None = None) -> "Workflow":
        self._no_context("projection", f)
        names = list(names) if names is not None else _default_names(f, self.node.names)
        if len(names) != len(f.out_types):
            raise WorkflowError(f"projection: {len(names)} names for {len(f.out_types)} output fields")
        return Workflow(self._udf_node("projection", f, self.node.types, schema=tuple(zip(names, f.out_types))))

    def rename(self, names: Sequence[str], order: Sequence[int] | None = None) -> "Workflow":
        """Rename columns; ``order`` optionally reorders them first (``order[j]`` = source column)."""
        order = tuple(range(len(self.node.schema))) if order is None else tuple(order)
        if sorted(order) != list(range(len(self.node.schema))) or len(names) != len(order):
            raise WorkflowError("rename: order must be a permutation and names must match the arity")
        types = [self.node.types[j] for j in order]
        schema = tuple(zip(names, types))
        return Workflow(Node("rename", (self.node,), schema=schema, context_schema=self.node.context_schema, order=order))

    def _binary(self, kind: str, other: "Workflow | TupleSet", theta: UdfProgram | None = None) -> "Workflow":
        other = other if isinstance(other, Workflow) else Workflow.source(other)
        left, right = self.node, other.node
        merged = _merge_schema(left.context_schema, right.context_schema)
        if kind in ("union", "difference"):
            if left.types != right.types:
                raise WorkflowError(f"{kind}: schema mismatch {list(left.types)} vs {list(right.types)}")
            schema = left.schema
        else:
            rnames = [n if n not in left.names else f"{n}_r" for n in right.names]
            schema = left.schema + tuple(zip(rnames, right.types))
        if theta is not None:
            validate(theta)
            if theta.kind != "predicate":
                raise ContractViolation("theta_join needs a predicate UDF", program=theta.name)
            self._no_context("theta_join", theta)
            if tuple(theta.in_types) != left.types + right.types:
                raise WorkflowError("theta_join: predicate must read the left fields followed by the right fields")
        return Workflow(Node(kind, (left, right), udf=theta, schema=schema, context_schema=merged))

    def cartesian(self, other) -> "Workflow":
        return self._binary("cartesian", other)

    def theta_join(self, other, theta: UdfProgram) -> "Workflow":
        return self._binary("theta_join", other, theta)

    def union(self, other) -> "Workflow":
        return self._binary("union", other)

    def difference(self, other) -> "Workflow":
        return self._binary("difference", other)

    # apply
    def map(self, f: UdfProgram, names: Sequence[str] | None = None) -> "Workflow":
        names = list(names) if names is not None else _default_names(f, self.node.names)
        if len(names) != len(f.out_types):
            raise WorkflowError(f"map: {len(names)} names for {len(f.out_types)} output fields")
        return Workflow(self._udf_node("map", f, self.node.types, schema=tuple(zip(names, f.out_types))))

    def flatmap(self, f: UdfProgram, names: Sequence[str] | None = None) -> "Workflow":
        names = list(names) if names is not None else [f"c{j}" for j in range(len(f.out_types))]
        return Workflow(self._udf_node("flatmap", f, self.node.types, schema=tuple(zip(names, f.out_types))))

    def filter(self, f: UdfProgram) -> "Workflow":
        return Workflow(self._udf_node("filter", f, self.node.types, schema=self.node.schema))

    # aggregate
    def reduce(self, f: UdfProgram, key: UdfProgram | None = None, names: Sequence[str] | None = None) -> "Workflow":
        if key is not None:
            validate(key)
            if key.kind != "key" or tuple(key.in_types) != self.node.types:
                raise ContractViolation("reduce key must be a key UDF over the input tuple", program=key.name)
            _check_context(key, self.node.context_schema, "reduce key")
        agg_names = list(names) if names is not None else [f"a{j}" for j in range(len(f.agg_types))]
        schema = tuple(zip(agg_names, f.agg_types))
        if key is not None:
            schema = (("key", I32),) + schema
        return Workflow(self._udf_node("reduce", f, self.node.types, key=key, schema=schema))

    # control
    def update(self, f: UdfProgram) -> "Workflow":
        return Workflow(self._udf_node("update", f, (), schema=self.node.schema))

    def loop(self, inv: UdfProgram) -> "Workflow":
        upstream = self.node.ancestors()
        if any(n.kind == "loop" for n in upstream):
            raise WorkflowError("nested loops are not supported")
        if any(n.kind in BINARY for n in upstream) or sum(n.kind == "source" for n in upstream) != 1:
            raise WorkflowError("a loop body must be a linear chain from a single source")
        return Workflow(self._udf_node("loop", inv, (), schema=self.node.schema))

    def evaluate(self, strategy: str = "adaptive", engine=None, **options) -> TupleSet:
        from .engine import Engine

        engine = engine or Engine(**options)
        return engine.evaluate(self, strategy=strategy)

    def save(self, path, **kw) -> TupleSet:
        return self.evaluate(**kw).save(path)

    def nodes(self) -> list[Node]:
        return self.node.ancestors()

    def __repr__(self) -> str:
        chain = " -> ".join(n.label for n in self.nodes())
        return f"Workflow({chain})"


def _merge_schema(a: dict[str, ContextSpec], b: dict[str, ContextSpec]) -> dict[str, ContextSpec]:
    out = {}
    for k, v in a.items():
        out[f"{k}.left" if k in b else k] = v
    for k, v in b.items():
        out[f"{k}.right" if k in a else k] = v
    return out
