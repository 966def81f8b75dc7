"""Tiered pull-based runtime: scheduler, memory pool and plan executor."""

from .executor import PlanExecutor, RunStats, form_units
from .pool import MemoryPool, PoolStats
from .scheduler import BlockDescriptor, ExecutionError, SlowdownHook, TierTopology, partition, schedule
from .updates import apply_update_sets

__all__ = [
    "PlanExecutor", "RunStats", "form_units", "MemoryPool", "PoolStats", "BlockDescriptor",
    "ExecutionError", "SlowdownHook", "TierTopology", "partition", "schedule", "apply_update_sets",
]
