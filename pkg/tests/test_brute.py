import numpy as np
import pytest

from flowground import (
    CapExceededError,
    CostMatrix,
    DropCosts,
    ThreadSpec,
    bench_compare,
    brute_force_ground,
    drop_dtw,
    model_problem,
)
from flowground.graph import FlowGraph, StepNode, normalize
from util import random_costs


def test_chain_equals_plain_drop_dtw():
    rng = np.random.default_rng(1)
    g = model_problem(ThreadSpec((4,)))
    c, d = random_costs(rng, 4, 7)
    assert brute_force_ground(g, c, d).cost == drop_dtw([0, 1, 2, 3], c, d).cost


def test_two_free_steps_pick_reversed_order():
    g = model_problem(ThreadSpec((1, 1)))
    c = CostMatrix(np.array([[10.0, 0.1], [0.1, 10.0]]))
    d = DropCosts(np.full(2, 100.0))
    a = brute_force_ground(g, c, d)
    assert a.tau_star == (1, 0)
    assert a.cost == pytest.approx(0.2)


def test_tie_breaks_to_lexicographically_smallest_sort():
    g = model_problem(ThreadSpec((1, 1)))
    c = CostMatrix(np.full((2, 2), 1.0))  # every sort costs the same
    d = DropCosts(np.full(2, 100.0))
    assert brute_force_ground(g, c, d).tau_star == (0, 1)


def test_cap_exceeded():
    bag = normalize(
        FlowGraph(nodes=tuple(StepNode(id=i) for i in range(6)), edges=frozenset())
    )
    rng = np.random.default_rng(2)
    c, d = random_costs(rng, 6, 8)
    with pytest.raises(CapExceededError):
        brute_force_ground(bag, c, d, cap=10)


def test_bench_report_counts_are_exact():
    rng = np.random.default_rng(3)
    spec = ThreadSpec((2, 2))
    g = model_problem(spec)
    c, d = random_costs(rng, 4, 16)
    rep = bench_compare(g, c, d, repeats=2)
    assert rep.n_sorts == 6
    assert rep.n_tsort_nodes == 13
    assert rep.speedup == pytest.approx(rep.t_brute_ms / rep.t_graph_ms)
    assert rep.rho_predicted == pytest.approx(6 * 4 / (2 * 13))
    assert set(rep.to_json_dict()) == {
        "n_sorts",
        "n_tsort_nodes",
        "t_brute_ms",
        "t_graph_ms",
        "speedup",
        "rho_predicted",
    }


def test_bench_chain_speedup_near_one():
    rng = np.random.default_rng(4)
    g = model_problem(ThreadSpec((5,)))
    c, d = random_costs(rng, 5, 30)
    rep = bench_compare(g, c, d, repeats=3)
    assert rep.n_sorts == 1
    # single sort on each side: same order of magnitude, no blow-up
    assert 0.05 < rep.speedup < 20.0
