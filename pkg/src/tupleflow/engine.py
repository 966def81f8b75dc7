"""Front door: plan, synthesize and execute a workflow."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

from .algebra import Workflow
from .analyzer import FunctionStats, HardwareProfile
from .planner import AbstractPlan, plan
from .relation import TupleSet
from .runtime import MemoryPool, PlanExecutor, RunStats, SlowdownHook, TierTopology
from .synth import ExecutionPlan, synthesize
from .synth.compiler import default_backend

logger = logging.getLogger(__name__)


@dataclass
class EvalResult:
    result: TupleSet
    plan: ExecutionPlan
    abstract: AbstractPlan
    stats: RunStats


@dataclass
class Engine:
    """Holds the hardware profile, topology, backend and a compiled-kernel cache shared across runs."""

    hw: HardwareProfile = field(default_factory=HardwareProfile)
    topology: TierTopology | None = None
    backend: str = field(default_factory=default_backend)
    pool: MemoryPool = field(default_factory=MemoryPool)
    kernels: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.topology is None:
            self.topology = TierTopology(executors_per_node=self.hw.worker_threads)

    def synthesize(self, wf: Workflow, strategy: str = "adaptive", stats: Mapping[str, FunctionStats] | None = None,
                   force_lowering: str | None = None) -> tuple[AbstractPlan, ExecutionPlan]:
        ap = plan(wf, stats=stats, hw=self.hw)
        return ap, synthesize(ap, strategy, self.hw, force_lowering)

    def run(self, wf: Workflow | TupleSet, strategy: str = "adaptive", topology: TierTopology | None = None,
            stats: Mapping[str, FunctionStats] | None = None, force_lowering: str | None = None,
            slowdown: SlowdownHook | None = None) -> EvalResult:
        if isinstance(wf, TupleSet):
            wf = Workflow.source(wf)
        ap, ep = self.synthesize(wf, strategy, stats, force_lowering)
        logger.debug("execution plan\n%s", ep.explain())
        ex = PlanExecutor(ep, topology or self.topology, self.hw, self.backend, self.pool, slowdown, self.kernels)
        out = ex.run()
        return EvalResult(out, ep, ap, ex.stats)

    def evaluate(self, wf: Workflow | TupleSet, strategy: str = "adaptive", **kw) -> TupleSet:
        return self.run(wf, strategy, **kw).result
