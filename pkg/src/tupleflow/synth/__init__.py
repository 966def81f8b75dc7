"""Execution-strategy synthesis and stage kernel generation."""

from .plan import (
    LOWERINGS,
    STRATEGIES,
    ExecutionPlan,
    Stage,
    lower_reduce,
    synthesize,
    synthesize_adaptive,
    synthesize_operator_at_a_time,
    synthesize_pipeline,
)

__all__ = [
    "LOWERINGS", "STRATEGIES", "ExecutionPlan", "Stage", "lower_reduce", "synthesize",
    "synthesize_adaptive", "synthesize_operator_at_a_time", "synthesize_pipeline",
]
