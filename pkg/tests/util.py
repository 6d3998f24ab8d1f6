"""Shared test helpers: random DAGs and random grounding instances."""

from __future__ import annotations

import numpy as np

from flowground import CapExceededError, CostMatrix, DropCosts
from flowground.graph import FlowGraph, StepNode, enumerate_topological_sorts, normalize

EDGE_PROBS = (0.15, 0.3, 0.5, 0.7)


def random_dag(rng: np.random.Generator, n_steps: int, edge_prob: float) -> FlowGraph:
    """Random normalized DAG: edges only from lower to higher ids."""
    edges = {
        (i, j)
        for i in range(n_steps)
        for j in range(i + 1, n_steps)
        if rng.random() < edge_prob
    }
    nodes = tuple(StepNode(id=i) for i in range(n_steps))
    return normalize(FlowGraph(nodes=nodes, edges=frozenset(edges)))


def random_dag_bounded(
    rng: np.random.Generator, max_steps: int, max_sorts: int
) -> FlowGraph:
    """Random DAG whose sort count stays below ``max_sorts`` (resampled)."""
    while True:
        n = int(rng.integers(1, max_steps + 1))
        p = float(rng.choice(EDGE_PROBS))
        g = random_dag(rng, n, p)
        try:
            enumerate_topological_sorts(g, cap=max_sorts)
        except CapExceededError:
            continue
        return g


def random_costs(
    rng: np.random.Generator, n_steps: int, n_clips: int
) -> tuple[CostMatrix, DropCosts]:
    c = CostMatrix(rng.uniform(0.0, 5.0, size=(n_steps, n_clips)))
    d = DropCosts(rng.uniform(0.0, 2.0, size=n_clips))
    return c, d
