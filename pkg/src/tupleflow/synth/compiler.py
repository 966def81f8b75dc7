"""Turn generated kernel source into callables (numba or plain Python) and run them."""

from __future__ import annotations

import hashlib
import importlib.util
import logging
import os
import sys
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..context import ACC_DTYPE, F32, I32, ContextSpec, UpdateSet
from .codegen import CTX_CODE_SHIFT, ChainOp, PassCode, count_types, generate_pass, generate_update

logger = logging.getLogger(__name__)

BACKENDS = ("numba", "python")
INITIAL_CAPACITY = 64
HASH_SLACK = 1

_NUMBA_PRELUDE = "import numba\n_jit = numba.njit(cache=True, nogil=True, error_model='numpy')\n"
_lock = threading.Lock()
_modules: dict[str, dict] = {}
_stats = {"generated": 0, "reused": 0}


def cache_dir() -> Path:
    root = os.environ.get("TUPLEFLOW_CACHE") or os.path.join(
        os.environ.get("XDG_CACHE_HOME", os.path.expanduser("~/.cache")), "tupleflow"
    )
    path = Path(root) / "kernels"
    path.mkdir(parents=True, exist_ok=True)
    return path


def default_backend() -> str:
    return os.environ.get("TUPLEFLOW_BACKEND", "numba")


def _deco(backend: str) -> str:
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    return "@_jit" if backend == "numba" else ""


def load_source(source: str, backend: str) -> dict:
    """Namespace of the module built from ``source``; identical sources are loaded once."""
    key = hashlib.sha1(f"{backend}\n{source}".encode()).hexdigest()
    with _lock:
        ns = _modules.get(key)
        if ns is not None:
            _stats["reused"] += 1
            return ns
        _stats["generated"] += 1
        if backend == "python":
            ns = {"__name__": f"tupleflow_kernel_{key[:12]}"}
            exec(compile(source, f"<kernel {key[:12]}>", "exec"), ns)
        else:
            name = f"tf_{key[:20]}"
            path = cache_dir() / f"{name}.py"
            if not path.exists():
                fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
                with os.fdopen(fd, "w") as fh:
                    fh.write(_NUMBA_PRELUDE + source)
                os.replace(tmp, path)
            spec = importlib.util.spec_from_file_location(name, path)
            mod = importlib.util.module_from_spec(spec)
            sys.modules[name] = mod
            spec.loader.exec_module(mod)
            ns = vars(mod)
        _modules[key] = ns
        return ns


def kernel_cache_stats() -> dict[str, int]:
    return dict(_stats)


class KernelIndexError(IndexError):
    pass


@dataclass
class PassState:
    """Per-executor scratch: temporaries and reduce accumulators."""

    temps: list[np.ndarray] = field(default_factory=list)
    acc: dict[str, np.ndarray] = field(default_factory=dict)
    rows: int = 0


class CompiledPass:
    """A generated pass: stage functions plus the tiling driver."""

    def __init__(self, stage_specs: Sequence[tuple[Sequence[ChainOp], Sequence[str], str, int]],
                 context: dict[str, ContextSpec], backend: str | None = None, label: str = "pass"):
        self.backend = backend or default_backend()
        self.label = label
        self.context = dict(context)
        self.code: PassCode = generate_pass(stage_specs, self.context, _deco(self.backend))
        self.ns = load_source(self.code.source, self.backend)
        self.drive = self.ns["drive"]
        self.final = self.code.stages[-1]
        self.lowering = self.final.lowering
        self.out_types = self.final.out_types
        self.in_types = self.code.stages[0].in_types
        self.expansion = 1
        for s in self.code.stages:
            self.expansion *= s.expansion

    @property
    def source(self) -> str:
        return self.code.source

    # accumulator state
    def new_state(self, tile: int, alloc=None) -> PassState:
        alloc = alloc or (lambda shape, dtype: np.empty(shape, dtype))
        st = PassState()
        for nf, ni, exp in self.code.temps:
            st.temps.append(alloc((nf, tile * exp), np.float32))
            st.temps.append(alloc((ni, tile * exp), np.int32))
        f = self.final
        nf = sum(1 for b, _ in f.agg_slots if b == "F")
        ni = len(f.agg_slots) - nf
        if f.lowering in ("reduction-variable", "direct-index"):
            L = f.lanes
            st.acc["AGF"] = np.zeros((L, nf), np.float64)
            st.acc["AGI"] = np.zeros((L, ni), np.int64)
            for k, key in enumerate(f.acc_keys):
                spec = self.context[key]
                st.acc[f"A_{k}"] = np.zeros((L, max(1, spec.size)), ACC_DTYPE[spec.dtype])
        elif f.lowering == "hash-table":
            self._new_tables(st, INITIAL_CAPACITY, INITIAL_CAPACITY, nf, ni)
        return st

    @staticmethod
    def _table(cap: int, nf: int, ni: int) -> tuple:
        return (np.zeros(cap, np.int64), np.zeros(cap, np.uint8), np.zeros((cap, nf), np.float64),
                np.zeros((cap, ni), np.int64), np.zeros(1, np.int64))

    def _new_tables(self, st: PassState, gcap: int, ccap: int, nf: int, ni: int) -> None:
        st.acc.update(zip(("GK", "GU", "GVF", "GVI", "GC"), self._table(gcap, nf, ni)))
        st.acc.update(zip(("CK", "CU", "CVF", "CVI", "CC"), self._table(ccap, 1, 1)))

    def _grow(self, st: PassState) -> None:
        a = st.acc
        f = self.final
        rows = f.reserve_rows
        for prefix, need in (("G", rows * f.expansion + HASH_SLACK), ("C", rows * f.ctx_writes_per_row + HASH_SLACK)):
            keys = a[prefix + "K"]
            cap = keys.shape[0]
            if a[prefix + "C"][0] + need <= (cap * 7) // 10:
                continue
            new_cap = cap * 2
            while a[prefix + "C"][0] + need > (new_cap * 7) // 10:
                new_cap *= 2
            vf, vi = a[prefix + "VF"], a[prefix + "VI"]
            nk, nu, nvf, nvi, nc = self._table(new_cap, vf.shape[1], vi.shape[1])
            self.ns["_reinsert"](keys, a[prefix + "U"], vf, vi, nk, nu, nvf, nvi, nc)
            a.update({prefix + "K": nk, prefix + "U": nu, prefix + "VF": nvf, prefix + "VI": nvi, prefix + "C": nc})

    def run(self, lo: int, hi: int, XF, XI, YF, YI, m0: int, ctx_flat: dict[str, np.ndarray],
            st: PassState, tile: int) -> int:
        """Process rows [lo, hi); returns the output count after the last written row."""
        cargs = [ctx_flat[k] for k in self.code.ctx_keys]
        names = self.final.reduce_args
        t_start, r_resume, m = lo, 0, m0
        tile = max(1, tile)
        with np.errstate(all="ignore"):
            while True:
                acc = [st.acc[n] for n in names]
                status, t_start, r_resume, m = self.drive(
                    lo, hi, t_start, r_resume, m, tile, XF, XI, YF, YI, *st.temps, *cargs, *acc
                )
                if status == 0:
                    break
                if status == 1:
                    self._grow(st)
                    continue
                raise KernelIndexError(
                    f"{self.label}: context index out of range while processing a row near {t_start + r_resume}"
                )
        st.rows += hi - lo
        return int(m)

    # results
    def update_set(self, st: PassState) -> UpdateSet:
        """Context deltas accumulated in ``st`` as dense per-key arrays."""
        f = self.final
        dense: dict[str, np.ndarray] = {}
        if f.lowering in ("reduction-variable", "direct-index"):
            for k, key in enumerate(f.acc_keys):
                spec = self.context[key]
                dense[key] = st.acc[f"A_{k}"].sum(axis=0)[: spec.size].reshape(spec.shape)
        elif f.lowering == "hash-table":
            used = st.acc["CU"] != 0
            codes = st.acc["CK"][used]
            kid = codes >> CTX_CODE_SHIFT
            flat = codes & ((1 << CTX_CODE_SHIFT) - 1)
            vf = st.acc["CVF"][used, 0]
            vi = st.acc["CVI"][used, 0]
            for key in f.acc_keys:
                spec = self.context[key]
                sel = kid == f.ctx_keys.index(key)
                acc = np.zeros(max(1, spec.size), ACC_DTYPE[spec.dtype])
                order = np.argsort(flat[sel], kind="stable")
                np.add.at(acc, flat[sel][order], (vf if spec.dtype == F32 else vi)[sel][order])
                dense[key] = acc[: spec.size].reshape(spec.shape)
        return UpdateSet(dense=dense)

    def aggregates(self, st: PassState) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        """(keys or None, f64 aggregates (groups, nf), i64 aggregates (groups, ni)) for this executor."""
        f = self.final
        if f.lowering == "hash-table":
            used = st.acc["GU"] != 0
            keys = st.acc["GK"][used]
            return keys, st.acc["GVF"][used], st.acc["GVI"][used]
        return None, st.acc["AGF"].sum(axis=0, keepdims=True), st.acc["AGI"].sum(axis=0, keepdims=True)


class CompiledUpdate:
    def __init__(self, p, backend: str | None = None):
        self.backend = backend or default_backend()
        self.p = p
        source, self.keys = generate_update(p, _deco(self.backend))
        self.source = source
        self.fn = load_source(source, self.backend)["update"]

    def __call__(self, ctx) -> None:
        """Apply the update in place to ``ctx``'s arrays."""
        arrays = [ctx[k].reshape(-1) for k in self.keys]
        with np.errstate(all="ignore"):
            status = self.fn(*arrays)
        if status != 0:
            raise KernelIndexError(f"update {self.p.name!r}: context index out of range")


def chain_ops(ops) -> list[ChainOp]:
    """ChainOp view of planner operators."""
    out = []
    for o in ops:
        n = o.node
        out.append(ChainOp(n.kind, n.udf, n.key, n.order, n.types))
    return out


__all__ = [
    "BACKENDS", "CompiledPass", "CompiledUpdate", "KernelIndexError", "PassState", "cache_dir",
    "chain_ops", "count_types", "default_backend", "kernel_cache_stats", "load_source", "I32",
]
