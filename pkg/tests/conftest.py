import itertools
import sys

import numpy as np
import pytest
from hypothesis import settings

from flowtune.dataflow import DataFlowGraph
from flowtune.regression import RegressorConfig
from flowtune.sim.generator import GESTURE_GENERATOR, GESTURE_GRAPH, GESTURE_SPECS, GESTURE_STAGE_PARAMS, generate
from flowtune.sim.replay import compare_predictors

settings.register_profile("flowtune", deadline=None, max_examples=100)
settings.load_profile("flowtune")


def random_dag(rng, n_max=7, p=0.4):
    """Random DAG on <= n_max stages: edges only go forward in a random order."""
    n = int(rng.integers(1, n_max + 1))
    names = [f"s{i}" for i in range(n)]
    order = list(rng.permutation(n))
    edges = [(names[order[i]], names[order[j]]) for i, j in itertools.combinations(range(n), 2)
             if rng.random() < p]
    return DataFlowGraph(tuple(names), tuple(edges))


def random_sp(rng, depth=0, counter=None):
    """Random series-parallel graph as (stages, connectors, entry stages, exit stages)."""
    counter = counter if counter is not None else itertools.count()
    if depth >= 3 or rng.random() < 0.3:
        s = f"n{next(counter)}"
        return [s], [], [s], [s]
    k = int(rng.integers(2, 4))
    parts = [random_sp(rng, depth + 1, counter) for _ in range(k)]
    stages = [s for p in parts for s in p[0]]
    conns = [c for p in parts for c in p[1]]
    if rng.random() < 0.5:  # series
        for a, b in zip(parts, parts[1:]):
            if len(a[3]) > 1 and len(b[2]) > 1:
                # many-to-many would not be series-parallel: route through a join stage
                j = f"n{next(counter)}"
                stages.append(j)
                conns += [(x, j) for x in a[3]] + [(j, y) for y in b[2]]
            else:
                conns += [(x, y) for x in a[3] for y in b[2]]
        return stages, conns, parts[0][2], parts[-1][3]
    return stages, conns, [s for p in parts for s in p[2]], [s for p in parts for s in p[3]]


@pytest.fixture(scope="session")
def gesture_trace():
    return generate(GESTURE_GENERATOR, GESTURE_GRAPH, GESTURE_SPECS, 30, 300, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gesture(seed, T=1000):
    return generate(GESTURE_GENERATOR, GESTURE_GRAPH, GESTURE_SPECS, 30, T, seed)


@pytest.fixture(scope="session")
def comparisons():
    """Predictor comparison under random actions on 20 default traces."""
    return [compare_predictors(gesture(seed), RegressorConfig(), seed=seed, stage_params=GESTURE_STAGE_PARAMS)
            for seed in range(20)]


def pytest_terminal_summary(terminalreporter):
    lines = getattr(sys.modules.get("test_acceptance"), "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
