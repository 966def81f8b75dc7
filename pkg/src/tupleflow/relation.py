"""Fixed-width columnar relations and the TupleSet carrier type."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .context import F32, I32, NUMPY_DTYPE, Context, type_of

Schema = tuple[tuple[str, str], ...]


def make_schema(spec) -> Schema:
    """Accept [("x", "f32"), ...] or ["f32", "i32"] (names default to c0, c1, ...)."""
    out = []
    for j, item in enumerate(spec):
        if isinstance(item, str):
            name, t = f"c{j}", item
        else:
            name, t = item
        if t not in (F32, I32):
            raise TypeError(f"column {name!r}: type must be f32 or i32, got {t!r}")
        out.append((str(name), t))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class Relation:
    """Columnar relation: one contiguous float32/int32 array per field."""

    schema: Schema
    columns: tuple[np.ndarray, ...]
    cardinality: int

    def __post_init__(self):
        if len(self.schema) != len(self.columns):
            raise ValueError("schema and column count differ")
        for (name, t), col in zip(self.schema, self.columns):
            if col.ndim != 1 or len(col) != self.cardinality:
                raise ValueError(f"column {name!r} must be 1-d with {self.cardinality} rows")
            if type_of(col.dtype) != t:
                raise ValueError(f"column {name!r} is {col.dtype}, schema says {t}")

    @classmethod
    def from_columns(cls, schema, columns: Sequence, cardinality: int | None = None) -> "Relation":
        schema = make_schema(schema)
        cols = tuple(
            np.ascontiguousarray(np.asarray(c, dtype=NUMPY_DTYPE[t])) for (_, t), c in zip(schema, columns)
        )
        if cardinality is None:
            cardinality = len(cols[0]) if cols else 0
        return cls(schema, cols, int(cardinality))

    @classmethod
    def from_rows(cls, schema, rows: Iterable[Sequence]) -> "Relation":
        schema = make_schema(schema)
        rows = [tuple(r) for r in rows]
        for i, r in enumerate(rows):
            if len(r) != len(schema):
                raise ValueError(f"row {i} has {len(r)} fields, schema has {len(schema)}")
        cols = [
            np.array([r[j] for r in rows], dtype=NUMPY_DTYPE[t]) for j, (_, t) in enumerate(schema)
        ]
        return cls(schema, tuple(cols), len(rows))

    @classmethod
    def from_packed(cls, schema, fblock: np.ndarray, iblock: np.ndarray, cardinality: int) -> "Relation":
        """Build from per-type 2-d blocks: f32 columns are rows of ``fblock`` in schema order, i32 of ``iblock``."""
        schema = make_schema(schema)
        nf = ni = 0
        cols = []
        for _, t in schema:
            if t == F32:
                cols.append(fblock[nf, :cardinality])
                nf += 1
            else:
                cols.append(iblock[ni, :cardinality])
                ni += 1
        rel = cls(schema, tuple(cols), int(cardinality))
        if fblock.shape[1] == cardinality and iblock.shape[1] == cardinality:
            rel.__dict__["_packed"] = (fblock[:nf], iblock[:ni])
        return rel

    def packed(self) -> tuple[np.ndarray, np.ndarray]:
        """(F, I) blocks of shape (n_f32_cols, N) and (n_i32_cols, N); copied once, then cached."""
        cached = self.__dict__.get("_packed")
        if cached is not None:
            return cached
        n = self.cardinality
        fcols = [c for c, t in zip(self.columns, self.types) if t == F32]
        icols = [c for c, t in zip(self.columns, self.types) if t == I32]
        fb = np.stack(fcols) if fcols else np.empty((0, n), np.float32)
        ib = np.stack(icols) if icols else np.empty((0, n), np.int32)
        self.__dict__["_packed"] = (fb, ib)
        return fb, ib

    @classmethod
    def empty(cls, schema) -> "Relation":
        schema = make_schema(schema)
        return cls(schema, tuple(np.empty(0, NUMPY_DTYPE[t]) for _, t in schema), 0)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.schema)

    @property
    def types(self) -> tuple[str, ...]:
        return tuple(t for _, t in self.schema)

    @property
    def arity(self) -> int:
        return len(self.schema)

    @property
    def row_bytes(self) -> int:
        return 4 * max(1, len(self.schema))

    @property
    def nbytes(self) -> int:
        return self.row_bytes * self.cardinality

    def __len__(self) -> int:
        return self.cardinality

    def rows(self) -> list[tuple]:
        if not self.columns:
            return [()] * self.cardinality
        return list(zip(*(c.tolist() for c in self.columns)))

    def row(self, i: int) -> tuple:
        return tuple(c[i] for c in self.columns)

    def take(self, index: np.ndarray) -> "Relation":
        index = np.asarray(index, dtype=np.int64)
        return Relation(self.schema, tuple(c[index] for c in self.columns), len(index))

    def slice(self, start: int, stop: int) -> "Relation":
        return Relation(self.schema, tuple(c[start:stop] for c in self.columns), stop - start)

    def with_names(self, names: Sequence[str]) -> "Relation":
        return Relation(tuple(zip(names, self.types)), self.columns, self.cardinality)

    def equals(self, other: "Relation") -> bool:
        return (
            self.types == other.types
            and self.cardinality == other.cardinality
            and all(np.array_equal(a, b, equal_nan=True) for a, b in zip(self.columns, other.columns))
        )

    def __repr__(self) -> str:
        return f"Relation({list(self.schema)}, {self.cardinality} rows)"


@dataclass(frozen=True, eq=False)
class TupleSet:
    """A relation paired with its Context. Evaluated TupleSets are immutable and shareable."""

    relation: Relation
    context: Context = field(default_factory=Context)

    @classmethod
    def from_rows(cls, schema, rows, context: Context | dict | None = None) -> "TupleSet":
        return cls(Relation.from_rows(schema, rows), _as_context(context))

    @classmethod
    def from_columns(cls, schema, columns, context: Context | dict | None = None) -> "TupleSet":
        return cls(Relation.from_columns(schema, columns), _as_context(context))

    @classmethod
    def load(cls, path, schema, context: Context | dict | None = None) -> "TupleSet":
        from .io import read_csv

        return cls(read_csv(path, schema), _as_context(context))

    def save(self, path) -> "TupleSet":
        from .io import write_csv

        write_csv(path, self.relation)
        return self

    def workflow(self):
        from .algebra import Workflow

        return Workflow.source(self)

    def __getattr__(self, name):
        # operator methods (map, reduce, ...) start a workflow rooted here
        from .algebra import Workflow

        if name in Workflow.OPERATORS:
            return getattr(Workflow.source(self), name)
        raise AttributeError(name)

    def __len__(self) -> int:
        return self.relation.cardinality


def _as_context(context) -> Context:
    if context is None:
        return Context()
    if isinstance(context, Context):
        return context
    return Context(context)
