import json

import numpy as np
import pytest
import scipy.linalg

from app.errors import ContractError, DimensionError, SchemaError
from app.sdp_solver import (
    LinearSdp,
    SdpBlock,
    SdpStatus,
    dump_problem,
    feasibility_margin,
    load_problem,
    min_eigenvalue,
    solve,
)


def scalar_lower_bound(bound: float) -> SdpBlock:
    """y >= bound as a 1x1 block."""
    return SdpBlock(np.array([[-bound]]), np.array([[[1.0]]]))


def test_minimize_scalar_with_lower_bound():
    solution = solve(LinearSdp(np.array([1.0]), (scalar_lower_bound(1.0),)))
    assert solution.status is SdpStatus.OPTIMAL
    assert solution.y[0] == pytest.approx(1.0, abs=1e-5)
    assert solution.objective_value == pytest.approx(1.0, abs=1e-5)
    assert solution.min_eig_slack >= -1e-6


def test_two_by_two_block():
    # [[y, 1], [1, y]] >= 0 iff y >= 1
    block = SdpBlock(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([np.eye(2)]))
    solution = solve(LinearSdp(np.array([1.0]), (block,)))
    assert solution.is_optimal
    assert solution.y[0] == pytest.approx(1.0, abs=1e-5)


def test_infeasible_problem_reports_negative_margin():
    upper = SdpBlock(np.array([[0.0]]), np.array([[[-1.0]]]))
    problem = LinearSdp(np.array([1.0]), (scalar_lower_bound(1.0), upper))
    solution = solve(problem)
    assert solution.status is SdpStatus.INFEASIBLE
    assert solution.margin == pytest.approx(-0.5, abs=1e-4)
    assert feasibility_margin(problem) < 0.0


def test_unbounded_objective_is_a_numerical_failure():
    solution = solve(LinearSdp(np.array([-1.0]), (scalar_lower_bound(0.0),)))
    assert solution.status is SdpStatus.NUMERICAL_FAILURE


def test_cost_on_unused_variable_is_a_numerical_failure():
    block = SdpBlock(np.eye(1), np.array([[[1.0]], [[0.0]]]))
    solution = solve(LinearSdp(np.array([0.0, 1.0]), (block,)))
    assert solution.status is SdpStatus.NUMERICAL_FAILURE
    assert "unbounded" in solution.message


def test_problem_without_variables():
    block = SdpBlock(2.0 * np.eye(2), np.zeros((0, 2, 2)))
    problem = LinearSdp(np.zeros(0), (block,))
    assert feasibility_margin(problem) == pytest.approx(2.0)
    assert solve(problem).is_optimal


def test_block_validation():
    with pytest.raises(ContractError):
        SdpBlock(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros((0, 2, 2)))
    with pytest.raises(DimensionError):
        SdpBlock(np.eye(2), np.zeros((1, 3, 3)))
    with pytest.raises(DimensionError):
        LinearSdp(np.zeros(2), (SdpBlock(np.eye(2), np.zeros((1, 2, 2))),))


def test_min_eigenvalue_rejects_non_square():
    assert min_eigenvalue(np.diag([3.0, -2.0, 1.0])) == pytest.approx(-2.0)
    with pytest.raises(ContractError):
        min_eigenvalue(np.zeros((2, 3)))


@pytest.mark.parametrize("seed", range(100))
def test_random_single_variable_matches_generalized_eigen_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    G = rng.standard_normal((n, n))
    F0 = 0.5 * (G + G.T)
    H = rng.standard_normal((n, n))
    F1 = H @ H.T + 0.5 * np.eye(n)
    # F0 + y F1 >= 0 iff y >= -min eig(F0, F1)
    y_star = -scipy.linalg.eigh(F0, F1, eigvals_only=True)[0]

    solution = solve(LinearSdp(np.array([1.0]), (SdpBlock(F0, F1[None]),)))
    assert solution.is_optimal
    assert solution.objective_value == pytest.approx(y_star, abs=1e-3)
    assert solution.min_eig_slack >= -1e-6


@pytest.mark.parametrize("seed", range(100))
def test_random_two_variable_matches_closed_form(seed):
    rng = np.random.default_rng(1000 + seed)
    a = rng.uniform(-2.0, 2.0)
    c1, c2 = rng.uniform(0.2, 3.0, size=2)
    # [[y1, a], [a, y2]] >= 0 minimizing c1 y1 + c2 y2 gives 2|a| sqrt(c1 c2)
    F = np.zeros((2, 2, 2))
    F[0, 0, 0] = 1.0
    F[1, 1, 1] = 1.0
    block = SdpBlock(np.array([[0.0, a], [a, 0.0]]), F)

    solution = solve(LinearSdp(np.array([c1, c2]), (block,)))
    assert solution.is_optimal
    assert solution.objective_value == pytest.approx(2.0 * abs(a) * np.sqrt(c1 * c2), abs=1e-3)
    assert solution.min_eig_slack >= -1e-6


def test_maximize_scalar_below_one():
    # minimize -t s.t. 1 - t >= 0
    solution = solve(LinearSdp(np.array([-1.0]), (SdpBlock(np.eye(1), -np.eye(1)[None]),)))
    assert solution.is_optimal
    assert solution.y[0] == pytest.approx(1.0, abs=1e-5)


def test_diagonal_interval_lower_end():
    # diag(y - 1, 3 - y) >= 0 minimizing y
    block = SdpBlock(np.diag([-1.0, 3.0]), np.diag([1.0, -1.0])[None])
    solution = solve(LinearSdp(np.array([1.0]), (block,)))
    assert solution.is_optimal
    assert solution.y[0] == pytest.approx(1.0, abs=1e-5)


def test_negative_constant_with_dead_variable_is_infeasible():
    block = SdpBlock(np.array([[-1.0]]), np.zeros((1, 1, 1)))
    problem = LinearSdp(np.array([1.0]), (block,))
    assert solve(problem).status is SdpStatus.INFEASIBLE
    assert feasibility_margin(problem) == pytest.approx(-1.0)


@pytest.mark.parametrize("F0,expected", [(np.diag([2.0]), 2.0), (np.diag([-3.0]), -3.0)])
def test_margin_of_constant_block(F0, expected):
    problem = LinearSdp(np.zeros(0), (SdpBlock(F0, np.zeros((0, 1, 1))),))
    assert feasibility_margin(problem) == pytest.approx(expected)


def test_margin_balances_two_diagonal_entries():
    # diag(y, 1 - y) >= t I is best at y = t = 0.5
    block = SdpBlock(np.diag([0.0, 1.0]), np.diag([1.0, -1.0])[None])
    assert feasibility_margin(LinearSdp(np.array([0.0]), (block,))) == pytest.approx(0.5, abs=1e-5)


def random_lower_bound_block(rng, n: int) -> SdpBlock:
    G = rng.standard_normal((n, n))
    H = rng.standard_normal((n, n))
    return SdpBlock(0.5 * (G + G.T), (H @ H.T + 0.5 * np.eye(n))[None])


@pytest.mark.parametrize("seed", range(20))
def test_extra_block_never_lowers_the_optimum(seed):
    rng = np.random.default_rng(2000 + seed)
    base = LinearSdp(np.array([1.0]), (random_lower_bound_block(rng, int(rng.integers(1, 4))),))
    extended = base.with_blocks([random_lower_bound_block(rng, int(rng.integers(1, 4)))])

    before, after = solve(base), solve(extended)
    assert before.is_optimal and after.is_optimal
    assert after.objective_value >= before.objective_value - 1e-6


@pytest.mark.parametrize("factor", [0.1, 10.0])
def test_status_survives_positive_scaling(factor):
    feasible = LinearSdp(np.array([1.0]), (SdpBlock(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([np.eye(2)])),))
    infeasible = LinearSdp(np.array([1.0]), (scalar_lower_bound(1.0), SdpBlock(np.zeros((1, 1)), -np.ones((1, 1, 1)))))
    for problem in (feasible, infeasible):
        scaled = LinearSdp(problem.objective, tuple(block.scaled(factor) for block in problem.blocks))
        original, rescaled = solve(problem), solve(scaled)
        assert rescaled.status is original.status
        if original.is_optimal:
            assert rescaled.y[0] == pytest.approx(original.y[0], abs=1e-5)


def interval_block(rng, n: int, y0: float, sign: float) -> SdpBlock:
    """(y - y0) * sign * F1 + S with S > 0, so y0 is strictly feasible."""
    G = rng.standard_normal((n, n))
    H = rng.standard_normal((n, n))
    F1 = sign * (G @ G.T + 0.5 * np.eye(n))
    S = 0.1 * np.eye(n) + 0.1 * H @ H.T
    return SdpBlock(S - y0 * F1, F1[None])


@pytest.mark.parametrize("seed", range(20))
def test_one_dimensional_problem_matches_grid_search(seed):
    rng = np.random.default_rng(3000 + seed)
    y0 = rng.uniform(-2.0, 2.0)
    blocks = (interval_block(rng, int(rng.integers(1, 4)), y0, 1.0),
              interval_block(rng, int(rng.integers(1, 4)), y0, -1.0))
    c = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)

    grid = np.linspace(-10.0, 10.0, 80001)
    feasible = np.ones(grid.shape, dtype=bool)
    for block in blocks:
        stacked = block.F0[None] + grid[:, None, None] * block.F[0][None]
        feasible &= np.linalg.eigvalsh(stacked)[:, 0] >= 0.0
    best = grid[feasible][np.argmin(c * grid[feasible])]

    solution = solve(LinearSdp(np.array([c]), blocks))
    assert solution.is_optimal
    assert solution.y[0] == pytest.approx(best, abs=1e-3)


def test_dump_and_load_problem(tmp_path):
    block = SdpBlock(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([np.eye(2)]), "pair")
    problem = LinearSdp(np.array([1.0]), (block,))
    path = dump_problem(problem, tmp_path / "sdp.json")
    loaded = load_problem(path)
    np.testing.assert_array_equal(loaded.objective, problem.objective)
    np.testing.assert_array_equal(loaded.blocks[0].F0, block.F0)
    np.testing.assert_array_equal(loaded.blocks[0].F, block.F)
    assert loaded.blocks[0].name == "pair"


def test_load_corrupt_dump(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(SchemaError):
        load_problem(path)
    path.write_text(json.dumps({"objective": [1.0]}))
    with pytest.raises(SchemaError):
        load_problem(path)
