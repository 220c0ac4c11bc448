import math

import numpy as np
import pytest

from app.abstraction import AbstractionGraph, Edge, build_cover
from app.errors import BellmanViolationError, DomainError, PolicyError, SchemaError
from app.planner import (
    UNREACHABLE,
    ValueFunction,
    check_bellman,
    concretize_value,
    policy_lookup,
    read_values_csv,
    reverse_dijkstra,
    write_values_csv,
)
from app.pwa_model import Box
from tests.conftest import deadbeat_controller


def graph_with(cover, arcs, goals, blocked=()):
    edges = []
    for source, target, cost in arcs:
        controller = deadbeat_controller(cover.centers[source, 0], cover.centers[target, 0], cost)
        edges.append(Edge(len(edges), source, target, controller))
    return AbstractionGraph(cover, tuple(edges), frozenset(goals), frozenset(blocked))


@pytest.fixture
def small_cover():
    return build_cover(Box(np.array([0.0]), np.array([4.0])), 0.5)


def test_chain_values(small_cover):
    graph = graph_with(small_cover, [(0, 1, 1.0), (1, 2, 2.0)], goals={2})
    vf = reverse_dijkstra(graph)
    assert list(vf.values[:3]) == [3.0, 2.0, 0.0]
    assert vf.policy[0] == 0 and vf.policy[1] == 1
    assert 2 not in vf.policy
    assert check_bellman(graph, vf).passed


def test_parallel_edges_pick_cheaper(small_cover):
    graph = graph_with(small_cover, [(0, 1, 5.0), (0, 1, 3.0)], goals={1})
    vf = reverse_dijkstra(graph)
    assert vf.value(0) == 3.0
    assert vf.policy[0] == 1


def test_cells_without_path_are_unreachable(small_cover):
    graph = graph_with(small_cover, [(0, 1, 1.0), (3, 4, 1.0)], goals={1})
    vf = reverse_dijkstra(graph)
    assert math.isinf(vf.value(3))
    assert math.isinf(vf.value(4))
    assert 3 not in vf.policy
    assert vf.finite_ids == [0, 1]


def test_ties_prefer_lowest_target_then_edge(small_cover):
    graph = graph_with(small_cover, [(0, 2, 1.0), (0, 1, 1.0), (0, 1, 1.0)], goals={1, 2})
    vf = reverse_dijkstra(graph)
    assert vf.policy[0] == 1


def test_zero_cost_cycle_does_not_trap_policy(small_cover):
    graph = graph_with(small_cover, [(0, 1, 0.0), (1, 0, 0.0), (1, 2, 1.0)], goals={2})
    vf = reverse_dijkstra(graph)
    assert vf.value(0) == vf.value(1) == 1.0
    assert graph.edge(vf.policy[1]).target == 2
    assert graph.edge(vf.policy[0]).target == 1


def test_corrupted_value_is_reported(small_cover):
    graph = graph_with(small_cover, [(0, 1, 1.0), (1, 2, 2.0)], goals={2})
    vf = reverse_dijkstra(graph)
    values = vf.values.copy()
    values[0] -= 0.5
    report = check_bellman(graph, ValueFunction(values, vf.policy, vf.goal_ids))
    assert not report.passed
    assert report.violations[0].cell_id == 0
    assert report.violations[0].edge_id == 0
    with pytest.raises(BellmanViolationError):
        report.raise_for_failure()


def test_finite_cell_without_edges_is_reported(small_cover):
    graph = graph_with(small_cover, [(0, 1, 1.0)], goals={1})
    values = np.array([1.0, 0.0, 4.0, math.inf, math.inf])
    report = check_bellman(graph, ValueFunction(values, {0: 0}, graph.goal_ids))
    assert [v.cell_id for v in report.violations] == [2]


def bellman_ford(graph: AbstractionGraph) -> np.ndarray:
    values = np.full(len(graph.cover), math.inf)
    for goal in graph.goal_ids:
        values[goal] = 0.0
    for _ in range(len(values)):
        changed = False
        for edge in graph.edges:
            if edge.source in graph.goal_ids:
                continue
            candidate = edge.cost_bound + values[edge.target]
            if candidate < values[edge.source]:
                values[edge.source] = candidate
                changed = True
        if not changed:
            break
    return values


@pytest.mark.parametrize("seed", range(20))
def test_dijkstra_matches_bellman_ford(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 51))
    cover = build_cover(Box(np.array([0.0]), np.array([float(n - 1)])), 0.5)
    assert len(cover) == n
    arcs = []
    for _ in range(int(rng.integers(0, 4 * n))):
        source, target = rng.integers(0, n, size=2)
        if source != target:
            cost = 0.0 if rng.random() < 0.1 else float(rng.uniform(0.0, 5.0))
            arcs.append((int(source), int(target), cost))
    goals = {int(g) for g in rng.choice(n, size=min(n, int(rng.integers(1, 4))), replace=False)}
    graph = graph_with(cover, arcs, goals)

    vf = reverse_dijkstra(graph)
    expected = bellman_ford(graph)
    finite = np.isfinite(expected)
    np.testing.assert_array_equal(np.isfinite(vf.values), finite)
    np.testing.assert_allclose(vf.values[finite], expected[finite], rtol=0.0, atol=1e-12)
    assert check_bellman(graph, vf).passed
    for cell, edge_id in vf.policy.items():
        edge = graph.edge(edge_id)
        assert abs(vf.value(cell) - vf.value(edge.target) - edge.cost_bound) <= 1e-12


def test_line_graph_values(line_graph):
    vf = reverse_dijkstra(line_graph)
    assert list(vf.values) == [8.5, 2.25, 0.0, 2.25, 8.5]
    assert dict(vf.policy) == {0: 2, 1: 3, 3: 1, 4: 0}


def test_concretize_takes_minimum_over_containing_cells(line_graph):
    vf = reverse_dijkstra(line_graph)
    assert concretize_value(vf, line_graph.cover, [0.1]) == 0.0
    assert concretize_value(vf, line_graph.cover, [0.5]) == 0.0
    assert concretize_value(vf, line_graph.cover, [1.5]) == 2.25
    with pytest.raises(DomainError):
        concretize_value(vf, line_graph.cover, [3.0])


def test_concretize_matches_brute_force(line_graph):
    vf = reverse_dijkstra(line_graph)
    cover = line_graph.cover
    xs = np.random.default_rng(5).uniform(-2.5, 2.5, size=1000)
    for x in xs:
        inside = [i for i, c in enumerate(cover.centers[:, 0]) if abs(x - c) <= 0.5]
        assert concretize_value(vf, cover, [x]) == min(vf.value(i) for i in inside)


def test_policy_lookup(line_graph):
    vf = reverse_dijkstra(line_graph)
    decision = policy_lookup(vf, line_graph.cover, line_graph, [2.0])
    assert (decision.cell_id, decision.edge.edge_id, decision.target) == (4, 0, 3)
    assert policy_lookup(vf, line_graph.cover, line_graph, [1.5]).cell_id == 3
    assert policy_lookup(vf, line_graph.cover, line_graph, [0.2]) is None
    np.testing.assert_allclose(decision.control([2.0]), [0.0])


def test_policy_lookup_without_finite_cell(small_cover):
    graph = graph_with(small_cover, [(0, 1, 1.0)], goals={1})
    vf = reverse_dijkstra(graph)
    with pytest.raises(PolicyError):
        policy_lookup(vf, small_cover, graph, [3.0])


def test_values_csv_round_trip(small_cover, tmp_path):
    graph = graph_with(small_cover, [(0, 1, 1.0), (1, 2, 2.0)], goals={2})
    vf = reverse_dijkstra(graph)
    path = write_values_csv(vf, small_cover, tmp_path / "values.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "cell_id,c0,value,policy_edge_id"
    assert lines[4].endswith(f",{UNREACHABLE},")
    restored = read_values_csv(path, graph)
    np.testing.assert_array_equal(restored.values, vf.values)
    assert dict(restored.policy) == dict(vf.policy)


def test_values_csv_must_match_graph(small_cover, tmp_path):
    graph = graph_with(small_cover, [(0, 1, 1.0)], goals={1})
    path = write_values_csv(reverse_dijkstra(graph), small_cover, tmp_path / "values.csv")
    bigger = build_cover(Box(np.array([0.0]), np.array([9.0])), 0.5)
    with pytest.raises(SchemaError):
        read_values_csv(path, AbstractionGraph(bigger, (), frozenset(), frozenset()))
