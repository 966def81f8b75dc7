"""Size-classed buffer pool for column blocks."""

from __future__ import annotations

import logging
import threading
from dataclasses import asdict, dataclass

import numpy as np

logger = logging.getLogger(__name__)

MIN_CLASS_BYTES = 64


@dataclass
class PoolStats:
    hits: int = 0
    misses: int = 0
    spills: int = 0
    releases: int = 0
    bytes_held: int = 0

    @property
    def allocations(self) -> int:
        """Requests that needed fresh memory."""
        return self.misses + self.spills

    def to_dict(self) -> dict:
        return {**asdict(self), "allocations": self.allocations}


def size_class(nbytes: int) -> int:
    c = MIN_CLASS_BYTES
    while c < nbytes:
        c <<= 1
    return c


class MemoryPool:
    """Reuses released buffers of the same power-of-two size class.

    Buffers past ``cap_bytes`` of pooled memory are plain allocations that are
    dropped on release (a spill), never an error.
    """

    def __init__(self, cap_bytes: int = 1 << 30):
        if cap_bytes <= 0:
            raise ValueError("cap_bytes must be positive")
        self.cap_bytes = cap_bytes
        self.stats = PoolStats()
        self._free: dict[int, list[np.ndarray]] = {}
        self._owned: set[int] = set()
        self._lock = threading.Lock()

    def alloc(self, shape, dtype) -> np.ndarray:
        shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
        dtype = np.dtype(dtype)
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        cls = size_class(nbytes)
        with self._lock:
            free = self._free.get(cls)
            if free:
                raw = free.pop()
                self.stats.hits += 1
            elif self.stats.bytes_held + cls <= self.cap_bytes:
                raw = np.empty(cls, np.uint8)
                self._owned.add(id(raw))
                self.stats.bytes_held += cls
                self.stats.misses += 1
            else:
                self.stats.spills += 1
                logger.warning("memory pool exhausted (%d bytes held); allocating %d bytes outside the pool",
                               self.stats.bytes_held, nbytes)
                raw = np.empty(cls, np.uint8)
        return raw[:nbytes].view(dtype).reshape(shape)

    def release(self, arr: np.ndarray) -> None:
        raw = arr
        while raw.base is not None:
            raw = raw.base
        with self._lock:
            self.stats.releases += 1
            if id(raw) in self._owned:
                self._free.setdefault(raw.nbytes, []).append(raw)

    def clear(self) -> None:
        with self._lock:
            self._free.clear()
            self._owned.clear()
            self.stats.bytes_held = 0
