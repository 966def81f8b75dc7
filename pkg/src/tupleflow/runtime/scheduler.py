"""Tiered pull-based block scheduling: a global manager, per-node local managers and executor threads."""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

logger = logging.getLogger(__name__)

DEFAULT_GM_BLOCK = 16 << 20
DEFAULT_EXEC_BLOCK = 1 << 20
_DONE = object()


class ExecutionError(RuntimeError):
    """An executor failed; the whole job was aborted."""


@dataclass(frozen=True)
class TierTopology:
    node_count: int = 1
    executors_per_node: int = 4
    gm_block_bytes: int = DEFAULT_GM_BLOCK
    exec_block_bytes: int = DEFAULT_EXEC_BLOCK
    prefetch: int = 2

    def __post_init__(self):
        if self.node_count < 1 or self.executors_per_node < 1:
            raise ValueError("node_count and executors_per_node must be at least 1")
        if not self.gm_block_bytes >= self.exec_block_bytes > 0:
            raise ValueError("need gm_block_bytes >= exec_block_bytes > 0")
        if self.prefetch < 1:
            raise ValueError("prefetch must be at least 1")

    @property
    def workers(self) -> int:
        return self.node_count * self.executors_per_node

    @classmethod
    def for_workers(cls, workers: int, **kw) -> "TierTopology":
        return cls(executors_per_node=workers, **kw)


@dataclass(frozen=True)
class BlockDescriptor:
    tupleset: int
    start: int
    end: int
    size_bytes: int
    seq: int = 0

    @property
    def rows(self) -> int:
        return self.end - self.start


def partition(tupleset: int, rows: int, row_bytes: int, block_bytes: int, start: int = 0,
              seq0: int = 0) -> list[BlockDescriptor]:
    """Split [start, start+rows) into in-order blocks of about ``block_bytes``."""
    per = max(1, block_bytes // max(1, row_bytes))
    out = []
    lo, end = start, start + rows
    while lo < end:
        hi = min(end, lo + per)
        out.append(BlockDescriptor(tupleset, lo, hi, (hi - lo) * row_bytes, seq0 + len(out)))
        lo = hi
    return out


@dataclass
class ExecutorStats:
    node: int
    executor: int
    busy_s: float = 0.0
    idle_s: float = 0.0
    blocks: int = 0
    rows: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["busy_ms"] = round(d.pop("busy_s") * 1e3, 3)
        d["idle_ms"] = round(d.pop("idle_s") * 1e3, 3)
        return d


@dataclass
class ScheduleResult:
    executors: list[ExecutorStats]
    blocks: int
    wall_s: float
    processed: list[BlockDescriptor] = field(default_factory=list)

    @property
    def rows(self) -> int:
        return sum(e.rows for e in self.executors)


@dataclass
class SlowdownHook:
    """Test hook: executor ``(node, executor)`` runs ``factor`` times slower.

    ``block_cost_s`` adds a simulated per-block cost to every executor (scaled
    by its factor), which makes balancing measurable without spare cores.
    """

    factors: Mapping[tuple[int, int], float] = field(default_factory=dict)
    block_cost_s: float = 0.0

    def after_block(self, ident: tuple[int, int], elapsed: float) -> None:
        f = self.factors.get(ident, 1.0)
        delay = (f - 1.0) * elapsed + f * self.block_cost_s
        if delay > 0:
            time.sleep(delay)


class GlobalManager:
    """Hands coarse blocks to local managers on request."""

    def __init__(self, blocks: list[BlockDescriptor]):
        self._blocks = blocks
        self._next = 0
        self._lock = threading.Lock()

    def request(self) -> BlockDescriptor | None:
        with self._lock:
            if self._next >= len(self._blocks):
                return None
            b = self._blocks[self._next]
            self._next += 1
            return b


class LocalManager(threading.Thread):
    """Pulls coarse blocks from the global manager and serves executor-sized blocks, ahead of demand."""

    def __init__(self, node: int, gm: GlobalManager, topo: TierTopology, row_bytes: int,
                 abort: threading.Event, seq: list[int], seq_lock: threading.Lock):
        super().__init__(name=f"tupleflow-lm{node}", daemon=True)
        self.node = node
        self.gm = gm
        self.topo = topo
        self.row_bytes = row_bytes
        self.abort = abort
        self.queue: queue.Queue = queue.Queue(maxsize=topo.prefetch * topo.executors_per_node)
        self._seq = seq
        self._seq_lock = seq_lock

    def _put(self, item) -> bool:
        while not self.abort.is_set():
            try:
                self.queue.put(item, timeout=0.05)
                return True
            except queue.Full:
                continue
        return False

    def run(self) -> None:
        while not self.abort.is_set():
            coarse = self.gm.request()
            if coarse is None:
                break
            for b in partition(coarse.tupleset, coarse.rows, self.row_bytes, self.topo.exec_block_bytes,
                               coarse.start):
                with self._seq_lock:
                    b = BlockDescriptor(b.tupleset, b.start, b.end, b.size_bytes, self._seq[0])
                    self._seq[0] += 1
                if not self._put(b):
                    return
        for _ in range(self.topo.executors_per_node):
            if not self._put(_DONE):
                return


def schedule(
    tupleset: int,
    rows: int,
    row_bytes: int,
    topo: TierTopology,
    work: Callable[[int, BlockDescriptor], None],
    slowdown: SlowdownHook | None = None,
) -> ScheduleResult:
    """Run ``work(worker_index, block)`` over every block of ``rows`` rows, pull-based.

    Worker indices are ``node * executors_per_node + executor``, i.e. the
    deterministic merge order. Raises :class:`ExecutionError` if any call fails.
    """
    t0 = time.perf_counter()
    coarse = partition(tupleset, rows, row_bytes, topo.gm_block_bytes)
    gm = GlobalManager(coarse)
    abort = threading.Event()
    seq, seq_lock = [0], threading.Lock()
    lms = [LocalManager(n, gm, topo, row_bytes, abort, seq, seq_lock) for n in range(topo.node_count)]
    stats = [ExecutorStats(n, e) for n in range(topo.node_count) for e in range(topo.executors_per_node)]
    processed: list[list[BlockDescriptor]] = [[] for _ in stats]
    errors: list[tuple[int, BaseException]] = []

    def executor(idx: int, lm: LocalManager) -> None:
        st = stats[idx]
        ident = (st.node, st.executor)
        while not abort.is_set():
            w0 = time.perf_counter()
            try:
                item = lm.queue.get(timeout=0.05)
            except queue.Empty:
                st.idle_s += time.perf_counter() - w0
                continue
            st.idle_s += time.perf_counter() - w0
            if item is _DONE:
                return
            b0 = time.perf_counter()
            try:
                work(idx, item)
            except BaseException as exc:  # abort the whole job
                errors.append((idx, exc))
                abort.set()
                return
            if slowdown is not None:
                slowdown.after_block(ident, time.perf_counter() - b0)
            st.busy_s += time.perf_counter() - b0
            st.blocks += 1
            st.rows += item.rows
            processed[idx].append(item)

    for lm in lms:
        lm.start()
    threads = []
    for idx, st in enumerate(stats):
        t = threading.Thread(target=executor, args=(idx, lms[st.node]), name=f"tupleflow-e{st.node}.{st.executor}",
                             daemon=True)
        t.start()
        threads.append(t)
    for t in threads:
        t.join()
    abort.set()
    for lm in lms:
        lm.join()
    if errors:
        idx, exc = errors[0]
        st = stats[idx]
        raise ExecutionError(f"executor {st.node}.{st.executor} failed: {type(exc).__name__}: {exc}") from exc
    wall = time.perf_counter() - t0
    blocks = sorted((b for bs in processed for b in bs), key=lambda b: b.start)
    return ScheduleResult(stats, len(blocks), wall, blocks)
