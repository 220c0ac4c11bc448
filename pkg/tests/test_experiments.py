import csv
import math

import numpy as np
import pytest

from app.experiments import (
    SWEEP_COLUMNS,
    SweepSpec,
    discretize,
    emit_plot_data,
    run_optimal_control_experiment,
    run_single_transition_sweep,
    run_transition,
    sweep_columns,
    triple_integrator_problem,
    value_grid,
)
from app.errors import ContractError
from app.models.system import ExperimentConfig
from app.planner import reverse_dijkstra
from tests.conftest import line_experiment


def series_discretization(Ac, Bc, T, terms=40):
    n = Ac.shape[0]
    A = np.zeros((n, n))
    integral = np.zeros((n, n))
    power = np.eye(n)
    factorial = 1.0
    for k in range(terms):
        A += power * T**k / factorial
        integral += power * T ** (k + 1) / (factorial * (k + 1))
        power = power @ Ac
        factorial *= k + 1
    return A, integral @ Bc


def test_discretize_matches_power_series(sweep_config):
    Ac = np.array(sweep_config.Ac)
    Bc = np.array(sweep_config.Bc)
    A, B = discretize(Ac, Bc, sweep_config.sample_time)
    A_ref, B_ref = series_discretization(Ac, Bc, sweep_config.sample_time)
    np.testing.assert_allclose(A, A_ref, atol=1e-12)
    np.testing.assert_allclose(B, B_ref, atol=1e-12)


def test_discretize_of_pure_integrator():
    A, B = discretize([[0.0]], [[1.0]], 0.25)
    np.testing.assert_allclose(A, [[1.0]])
    np.testing.assert_allclose(B, [[0.25]])


def test_triple_integrator_problem_scales_cells(sweep_config):
    problem = triple_integrator_problem(sweep_config, 2.0, 4.0, 0.01)
    P0 = np.array(sweep_config.P0)
    np.testing.assert_allclose(problem.source.P, P0 / 2.0)
    np.testing.assert_allclose(problem.target.P, 2.0 * P0)
    np.testing.assert_allclose(problem.target.c, sweep_config.target_center)
    assert problem.noise_vertices.shape == (8, 3)
    assert problem.cost.dim == 5


def test_sweep_spec_rejects_empty_grid(sweep_config):
    with pytest.raises(ContractError):
        SweepSpec(sweep_config, (), (1.0,), (0.01,))
    spec = SweepSpec.from_config(sweep_config)
    assert len(spec.points()) == 4 * 3 * 3
    assert spec.points()[1] == (0.5, 1.0, 0.01)


def test_scalar_transition_record(scalar_problem):
    record = run_transition(scalar_problem)
    assert record.status == "optimal"
    assert record.controller.cost_bound == pytest.approx(2.0, abs=1e-3)
    assert record.spectral_radius == pytest.approx(1.0, abs=1e-2)
    assert record.audit.passed


def test_transition_dump(scalar_problem, tmp_path):
    path = tmp_path / "sdp.json"
    run_transition(scalar_problem, dump_sdp=path)
    assert path.stat().st_size > 0


def not_above(a: float, b: float) -> bool:
    return a <= b + 1e-6 * max(1.0, abs(b))


def assert_monotone_costs(rows, spec: SweepSpec):
    """Costs never drop as the source grows (nu) or the target shrinks (eta)."""
    table = {(r.nu, r.eta, r.omega_max): r for r in rows}
    for eta in spec.eta:
        for omega in spec.omega_max:
            for small, large in zip(spec.nu, spec.nu[1:]):
                a, b = table[(small, eta, omega)], table[(large, eta, omega)]
                if b.feasible:
                    assert a.feasible
                    assert not_above(a.cost_bound, b.cost_bound)
    for nu in spec.nu:
        for omega in spec.omega_max:
            for small, large in zip(spec.eta, spec.eta[1:]):
                a, b = table[(nu, small, omega)], table[(nu, large, omega)]
                if b.feasible:
                    assert a.feasible
                    assert not_above(a.cost_bound, b.cost_bound)


def test_reference_sweep_point(sweep_config):
    rows = run_single_transition_sweep(SweepSpec(sweep_config, (1.0,), (1.0,), (0.01,)))
    assert len(rows) == 1
    row = rows[0]
    assert row.feasible and row.audit_passed
    assert row.cost_bound == pytest.approx(33.19, rel=1e-2)
    assert row.spectral_radius == pytest.approx(0.883, abs=1e-2)


def test_sweep_over_loose_targets(sweep_config):
    spec = SweepSpec(sweep_config, (0.5, 1.0, 2.0), (0.25, 0.5, 1.0), (0.001, 0.03))
    rows = run_single_transition_sweep(spec, workers=2)
    assert [(r.nu, r.eta, r.omega_max) for r in rows] == spec.points()
    assert all(r.audit_passed for r in rows if r.feasible)
    table = {(r.nu, r.eta, r.omega_max): r for r in rows}
    assert all(table[(1.0, eta, 0.001)].feasible for eta in spec.eta)
    assert table[(0.5, 0.5, 0.001)].feasible and table[(0.5, 0.5, 0.03)].feasible
    assert_monotone_costs(rows, spec)
    # noisier points need a harder contraction
    for nu in spec.nu:
        for eta in spec.eta:
            quiet, noisy = table[(nu, eta, 0.001)], table[(nu, eta, 0.03)]
            if quiet.feasible and noisy.feasible:
                assert not_above(noisy.spectral_radius, quiet.spectral_radius)


@pytest.mark.slow
def test_configured_sweep_is_monotone(sweep_config):
    spec = SweepSpec.from_config(sweep_config)
    rows = run_single_transition_sweep(spec, workers=4)
    assert [(r.nu, r.eta, r.omega_max) for r in rows] == spec.points()
    assert all(r.audit_passed for r in rows if r.feasible)
    assert_monotone_costs(rows, spec)
    # contracting targets (eta >= 2) and the largest noise bound are out of reach
    feasible = {(r.nu, r.eta, r.omega_max) for r in rows if r.feasible}
    assert feasible == {(nu, 1.0, omega) for nu in spec.nu for omega in (0.001, 0.01)}


def test_sweep_columns():
    assert sweep_columns() == SWEEP_COLUMNS
    assert sweep_columns(with_timing=True)[-1] == "solve_time"


def test_emit_plot_data_without_rows(tmp_path):
    path = emit_plot_data([], tmp_path / "empty.csv", SWEEP_COLUMNS)
    assert path.read_text().splitlines() == [",".join(SWEEP_COLUMNS)]


def test_emit_plot_data_formats_cells(tmp_path):
    rows = [{"a": True, "b": None, "c": math.inf, "d": 0.1}]
    path = emit_plot_data(rows, tmp_path / "cells.csv", ["a", "b", "c", "d"])
    assert path.read_text().splitlines()[1] == "true,,unreachable,0.1"


def test_value_grid_follows_cover(line_graph):
    vf = reverse_dijkstra(line_graph)
    columns, rows = value_grid(vf, line_graph.cover)
    assert columns == ["cell_id", "i0", "c0", "value"]
    assert [r["i0"] for r in rows] == [0, 1, 2, 3, 4]
    assert [r["c0"] for r in rows] == [-2.0, -1.0, 0.0, 1.0, 2.0]
    assert rows[4]["value"] == 8.5


def test_line_experiment_writes_all_artifacts(tmp_path):
    artifacts = run_optimal_control_experiment(line_experiment(), tmp_path)
    assert artifacts.passed, artifacts.failures
    summary = artifacts.summary
    assert summary.cells == 5
    assert summary.goal_cells == 1
    assert summary.finite_cells == 5
    assert summary.x0 == pytest.approx([1.9])
    assert len(summary.rollouts) == 3
    assert all(r.certified and r.total_cost <= summary.start_value + 1e-6 for r in summary.rollouts)
    assert summary.equilibria == [[0.0]]
    for path in (artifacts.abstraction_path, artifacts.values_path, artifacts.value_grid_path,
                 artifacts.trajectories_path, artifacts.summary_path):
        assert path.exists()
    with artifacts.trajectories_path.open() as handle:
        rows = list(csv.DictReader(handle))
    assert {row["seed"] for row in rows} == {"0", "1", "2"}


def test_unreachable_start_fails_the_experiment(tmp_path):
    config = line_experiment()
    config.system.input_box.lower = [-0.01]
    config.system.input_box.upper = [0.01]
    config.x0 = [2.0]
    artifacts = run_optimal_control_experiment(config, tmp_path)
    assert not artifacts.passed
    assert artifacts.summary.start_value is None
    assert artifacts.summary.rollouts == []
    assert artifacts.trajectories_path.read_text().startswith("seed,step")


def test_spiral_corner_experiment(spiral_config, tmp_path):
    """Spiral dynamics on the lower-right corner with coarse cells: one mode switch, one goal cell."""
    data = spiral_config.model_dump()
    data["system"]["domain"] = {"lower": [0.5, -2.0], "upper": [2.0, -0.5]}
    data.update(
        radius=0.4,
        goal={"kind": "box", "lower": [0.5, -1.95], "upper": [1.45, -1.05]},
        x0=[1.6, -1.6],
        rollouts=10,
    )
    config = ExperimentConfig.model_validate(data)

    artifacts = run_optimal_control_experiment(config, tmp_path)
    summary = artifacts.summary
    assert summary.cells == 16
    assert summary.goal_cells == 1
    assert summary.blocked_cells == 1
    assert summary.edges > 0
    assert summary.start_value is not None
    assert len(summary.rollouts) == 10
    assert all(r.reached_goal and r.certified and r.avoided_obstacles for r in summary.rollouts)
    assert all(r.total_cost <= summary.start_value + 1e-6 for r in summary.rollouts)
    assert artifacts.passed, artifacts.failures


@pytest.mark.slow
def test_spiral_experiment_end_to_end(spiral_config, tmp_path):
    artifacts = run_optimal_control_experiment(spiral_config, tmp_path, workers=4)
    summary = artifacts.summary
    assert summary.cells == 256
    assert 1_000 <= summary.edges <= 100_000
    assert summary.start_value is not None
    assert len(summary.rollouts) == 100
    assert all(r.reached_goal and r.certified and r.avoided_obstacles for r in summary.rollouts)
    assert artifacts.passed, artifacts.failures
    np.testing.assert_array_equal(np.round(summary.equilibria[0], 4), [-0.9635, 0.3654])
