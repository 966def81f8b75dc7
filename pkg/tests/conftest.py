from __future__ import annotations

import numpy as np
import pytest

from tupleflow.engine import Engine
from tupleflow.runtime import TierTopology

SMALL_BLOCKS = {"gm_block_bytes": 4096, "exec_block_bytes": 512}


def small_topology(workers: int = 1, nodes: int = 1) -> TierTopology:
    """Tiny blocks so that even a few hundred rows span many blocks."""
    return TierTopology(nodes, workers, **SMALL_BLOCKS)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def py_engine() -> Engine:
    """Engine with the pure-Python kernel backend: no compile latency."""
    return Engine(backend="python", topology=small_topology(1))


@pytest.fixture(scope="session")
def jit_engine() -> Engine:
    return Engine(backend="numba", topology=small_topology(1))


@pytest.fixture(params=["python", "numba"])
def any_engine(request) -> Engine:
    return Engine(backend=request.param, topology=small_topology(1))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
