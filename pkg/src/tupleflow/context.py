"""Shared-state dictionary attached to every TupleSet, plus staged delta sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

F32 = "f32"
I32 = "i32"
BOOL = "bool"

NUMPY_DTYPE = {F32: np.dtype(np.float32), I32: np.dtype(np.int32)}
ACC_DTYPE = {F32: np.dtype(np.float64), I32: np.dtype(np.int64)}


def type_of(dtype) -> str:
    dtype = np.dtype(dtype)
    if dtype == np.float32:
        return F32
    if dtype == np.int32:
        return I32
    raise TypeError(f"unsupported dtype {dtype}; only float32 and int32 are allowed")


@dataclass(frozen=True)
class ContextSpec:
    dtype: str
    shape: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1

    def __str__(self) -> str:
        dims = ",".join(str(d) for d in self.shape)
        return f"{self.dtype}[{dims}]" if self.shape else self.dtype


class Context:
    """Dictionary from string keys to fixed-shape float32/int32 arrays.

    Scalars are stored as 0-d arrays. Shapes and dtypes are fixed when a key is
    first declared; assigning a value of a different shape raises.
    """

    def __init__(self, entries: Mapping[str, object] | None = None):
        self._entries: dict[str, np.ndarray] = {}
        for key, value in (entries or {}).items():
            self.declare(key, value)

    def declare(self, key: str, value) -> None:
        if not isinstance(key, str) or not key:
            raise TypeError("context keys must be non-empty strings")
        if key in self._entries:
            raise KeyError(f"context key {key!r} already declared")
        arr = np.array(value, copy=True)
        if arr.dtype.kind == "f":
            arr = arr.astype(np.float32)
        elif arr.dtype.kind in "iub":
            arr = arr.astype(np.int32)
        type_of(arr.dtype)
        self._entries[key] = arr

    def __getitem__(self, key: str) -> np.ndarray:
        return self._entries[key]

    def __setitem__(self, key: str, value) -> None:
        cur = self._entries[key]
        arr = np.asarray(value)
        if arr.shape != cur.shape:
            raise ValueError(f"context key {key!r} has fixed shape {cur.shape}, got {arr.shape}")
        cur[...] = arr

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def keys(self):
        return self._entries.keys()

    def items(self):
        return self._entries.items()

    def spec(self, key: str) -> ContextSpec:
        arr = self._entries[key]
        return ContextSpec(type_of(arr.dtype), arr.shape)

    @property
    def schema(self) -> dict[str, ContextSpec]:
        return {k: self.spec(k) for k in self._entries}

    def copy(self) -> "Context":
        out = Context()
        out._entries = {k: v.copy() for k, v in self._entries.items()}
        return out

    def merged(self, other: "Context") -> "Context":
        """Union of two contexts; a key present on both sides becomes key.left / key.right."""
        out = Context()
        for key, value in self._entries.items():
            out._entries[f"{key}.left" if key in other else key] = value.copy()
        for key, value in other._entries.items():
            out._entries[f"{key}.right" if key in self else key] = value.copy()
        return out

    def equals(self, other: "Context") -> bool:
        if set(self._entries) != set(other._entries):
            return False
        return all(
            self._entries[k].dtype == other._entries[k].dtype
            and np.array_equal(self._entries[k], other._entries[k], equal_nan=True)
            for k in self._entries
        )

    def to_dict(self) -> dict[str, object]:
        return {k: v.tolist() for k, v in self._entries.items()}

    def __repr__(self) -> str:
        body = ", ".join(f"{k}: {v.tolist()!r}" for k, v in self._entries.items())
        return f"Context({{{body}}})"


@dataclass(frozen=True)
class Delta:
    key: str
    index: tuple[int, ...]
    op: str  # "add" or "increment"
    value: float | int = 1


@dataclass
class UpdateSet:
    """Staged commutative deltas for a Context.

    Holds either an explicit delta list (what the reference interpreter produces)
    or dense per-key accumulators (what executors produce). Dense accumulators
    are float64 for float entries and int64 for integer entries.
    """

    deltas: list[Delta] = field(default_factory=list)
    dense: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, key: str, index: tuple[int, ...], value, op: str = "add") -> None:
        self.deltas.append(Delta(key, tuple(int(i) for i in index), op, value))

    def __len__(self) -> int:
        return len(self.deltas) + len(self.dense)

    def is_empty(self) -> bool:
        return not self.deltas and not any(np.any(v) for v in self.dense.values())

    def accumulate_into(self, acc: dict[str, np.ndarray], schema: Mapping[str, ContextSpec]) -> None:
        for key, arr in self.dense.items():
            if key not in schema:
                raise KeyError(f"update targets undeclared context key {key!r}")
            target = acc.setdefault(key, np.zeros(schema[key].shape, ACC_DTYPE[schema[key].dtype]))
            target += arr.reshape(target.shape)
        for d in self.deltas:
            if d.key not in schema:
                raise KeyError(f"update targets undeclared context key {d.key!r}")
            spec = schema[d.key]
            target = acc.setdefault(d.key, np.zeros(spec.shape, ACC_DTYPE[spec.dtype]))
            target[d.index] += d.value


def merge_deltas(sets: Iterable[UpdateSet], schema: Mapping[str, ContextSpec]) -> dict[str, np.ndarray]:
    acc: dict[str, np.ndarray] = {}
    for s in sets:
        s.accumulate_into(acc, schema)
    return acc
