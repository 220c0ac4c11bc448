"""Single-transition sweeps, the end-to-end planning experiment and their CSV/JSON artifacts."""
import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import structlog

from app.abstraction import build_abstraction, build_cover, save_abstraction
from app.errors import ContractError, DomainError, NumericalFailure
from app.lmi_synthesis import (
    Ellipsoid,
    audit_to_record,
    audit_transition,
    build_transition_problem,
    closed_loop_spectral_radius,
    controller_to_record,
    synthesize_transition,
)
from app.models.records import (
    ExperimentSummaryRecord,
    RolloutSummaryRecord,
    SweepRowRecord,
    TransitionRecord,
)
from app.models.system import ExperimentConfig, SweepConfig, TransitionProblemConfig, region_of
from app.planner import (
    ValueFunction,
    check_bellman,
    concretize_value,
    reverse_dijkstra,
    write_values_csv,
)
from app.pwa_model import (
    AffineMode,
    Box,
    CostModel,
    affine_equilibrium,
    input_box_to_ellipsoid_rows,
    noise_vertices,
)
from app.sdp_solver import SdpStatus, SolverTolerances, dump_problem
from app.simulator import Rollout, certify_cost, rollout

logger = structlog.get_logger()

SWEEP_COLUMNS = ["nu", "eta", "omega_max", "feasible", "cost_bound", "spectral_radius", "status", "audit_passed"]
TIMING_COLUMNS = ["solve_time"]


def discretize(Ac, Bc, T: float) -> Tuple[np.ndarray, np.ndarray]:
    """Zero-order hold: A = exp(T Ac), B = int_0^T exp(t Ac) dt Bc."""
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.asarray(Bc, dtype=float).reshape(Ac.shape[0], -1)
    n, m = Bc.shape
    augmented = np.zeros((n + m, n + m))
    augmented[:n, :n] = Ac
    augmented[:n, n:] = Bc
    E = scipy.linalg.expm(T * augmented)
    return E[:n, :n], E[:n, n:]


def default_quadratic_cost(n_x: int, n_u: int) -> CostModel:
    """J(x, u) = x'x + u'u."""
    Q = np.zeros((n_x + n_u + 1, n_x + n_u + 1))
    Q[: n_x + n_u, : n_x + n_u] = np.eye(n_x + n_u)
    return CostModel.from_matrix(Q)


@dataclass(frozen=True)
class TransitionProblem:
    mode: AffineMode
    source: Ellipsoid
    target: Ellipsoid
    noise_vertices: np.ndarray
    input_rows: Tuple[np.ndarray, ...]
    cost: CostModel


def transition_problem_from_config(config: TransitionProblemConfig) -> TransitionProblem:
    return TransitionProblem(
        mode=config.mode.to_mode(),
        source=config.source.to_ellipsoid(),
        target=config.target.to_ellipsoid(),
        noise_vertices=noise_vertices(config.noise_box.to_box()),
        input_rows=tuple(input_box_to_ellipsoid_rows(config.input_box.to_box())),
        cost=CostModel.from_matrix(np.array(config.cost_Q)),
    )


def run_transition(problem: TransitionProblem, tolerances: Optional[SolverTolerances] = None,
                   dump_sdp=None) -> TransitionRecord:
    """Synthesize, audit and summarize one transition. Infeasible is a result, not an error."""
    if dump_sdp is not None:
        sdp, _ = build_transition_problem(problem.mode, problem.source, problem.target,
                                          problem.noise_vertices, problem.input_rows, problem.cost)
        dump_problem(sdp, dump_sdp)
    result = synthesize_transition(problem.mode, problem.source, problem.target, problem.noise_vertices,
                                   problem.input_rows, problem.cost, tolerances)
    if not result.feasible:
        return TransitionRecord(status=SdpStatus.INFEASIBLE.value, margin=result.margin)
    controller = result.controller
    audit = audit_transition(controller, problem.mode, problem.source, problem.target,
                             problem.noise_vertices, problem.input_rows, problem.cost)
    return TransitionRecord(
        status=SdpStatus.OPTIMAL.value,
        margin=result.margin,
        controller=controller_to_record(controller),
        spectral_radius=closed_loop_spectral_radius(problem.mode, controller.K),
        audit=audit_to_record(audit),
    )


@dataclass(frozen=True)
class SweepSpec:
    """Grid of (volume multiplier, contraction ratio, noise bound) around one base problem."""

    base: SweepConfig
    nu: Tuple[float, ...]
    eta: Tuple[float, ...]
    omega_max: Tuple[float, ...]

    def __post_init__(self):
        for name in ("nu", "eta", "omega_max"):
            values = tuple(getattr(self, name))
            if not values or any(v <= 0.0 for v in values):
                raise ContractError(f"sweep grid '{name}' must be non-empty and positive")
            object.__setattr__(self, name, values)

    @classmethod
    def from_config(cls, config: SweepConfig) -> "SweepSpec":
        return cls(config, tuple(config.nu), tuple(config.eta), tuple(config.omega_max))

    def points(self) -> List[Tuple[float, float, float]]:
        return [(nu, eta, omega) for nu in self.nu for eta in self.eta for omega in self.omega_max]


def triple_integrator_problem(base: SweepConfig, nu: float, eta: float, omega_max: float) -> TransitionProblem:
    """Source P = P0/nu around `center`, target P+ = eta P around `target_center`."""
    A, B = discretize(base.Ac, base.Bc, base.sample_time)
    n_x, n_u = B.shape
    P = np.array(base.P0, dtype=float) / nu
    cost = (CostModel.from_matrix(np.array(base.cost_Q)) if base.cost_Q is not None
            else default_quadratic_cost(n_x, n_u))
    return TransitionProblem(
        mode=AffineMode(A, B, np.zeros(n_x)),
        source=Ellipsoid(P, np.array(base.center)),
        target=Ellipsoid(eta * P, np.array(base.target_center)),
        noise_vertices=noise_vertices(Box.symmetric([omega_max] * n_x)),
        input_rows=tuple(input_box_to_ellipsoid_rows(Box.symmetric([base.input_bound] * n_u))),
        cost=cost,
    )


def _sweep_point(args) -> SweepRowRecord:
    spec, nu, eta, omega, tolerances = args
    problem = triple_integrator_problem(spec.base, nu, eta, omega)
    started = time.perf_counter()
    try:
        result = synthesize_transition(problem.mode, problem.source, problem.target, problem.noise_vertices,
                                       problem.input_rows, problem.cost, tolerances)
    except NumericalFailure as exc:
        logger.warning("sweep_point_failed", nu=nu, eta=eta, omega_max=omega, reason=exc.message)
        return SweepRowRecord(nu=nu, eta=eta, omega_max=omega, feasible=False,
                              status=SdpStatus.NUMERICAL_FAILURE.value,
                              solve_time=time.perf_counter() - started)
    elapsed = time.perf_counter() - started
    if not result.feasible:
        return SweepRowRecord(nu=nu, eta=eta, omega_max=omega, feasible=False,
                              status=SdpStatus.INFEASIBLE.value, solve_time=elapsed)
    controller = result.controller
    audit = audit_transition(controller, problem.mode, problem.source, problem.target,
                             problem.noise_vertices, problem.input_rows, problem.cost)
    return SweepRowRecord(
        nu=nu,
        eta=eta,
        omega_max=omega,
        feasible=True,
        cost_bound=controller.cost_bound,
        spectral_radius=closed_loop_spectral_radius(problem.mode, controller.K),
        status=SdpStatus.OPTIMAL.value,
        solve_time=elapsed,
        audit_passed=audit.passed,
    )


def run_single_transition_sweep(spec: SweepSpec, tolerances: Optional[SolverTolerances] = None,
                                workers: int = 1) -> List[SweepRowRecord]:
    """One row per grid point in (nu, eta, omega_max) row-major order."""
    tolerances = tolerances or SolverTolerances.from_settings()
    jobs = [(spec, nu, eta, omega, tolerances) for nu, eta, omega in spec.points()]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(job) for job in jobs]
    logger.info("sweep_finished", points=len(rows), feasible=sum(r.feasible for r in rows))
    return rows


def emit_plot_data(rows: Sequence[Mapping[str, Any]], path, columns: Sequence[str]) -> Path:
    """CSV with the given header in the given row order; empty rows give a header-only file."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in columns})
    logger.info("plot_data_written", path=str(path), rows=len(rows))
    return path


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else "unreachable"
    return str(value)


def sweep_columns(with_timing: bool = False) -> List[str]:
    return SWEEP_COLUMNS + (TIMING_COLUMNS if with_timing else [])


def value_grid(vf: ValueFunction, cover) -> Tuple[List[str], List[Dict[str, Any]]]:
    """Values on the cell-center grid for heat maps: grid indices, center, value."""
    dim = cover.dim
    columns = ["cell_id"] + [f"i{k}" for k in range(dim)] + [f"c{k}" for k in range(dim)] + ["value"]
    rows = []
    for cell, center in enumerate(cover.centers):
        index = np.unravel_index(cell, cover.grid_shape)
        row = {"cell_id": cell, "value": vf.value(cell)}
        row.update({f"i{k}": int(index[k]) for k in range(dim)})
        row.update({f"c{k}": float(center[k]) for k in range(dim)})
        rows.append(row)
    return columns, rows


def trajectory_rows(rollouts: Sequence[Rollout]) -> Tuple[List[str], List[Dict[str, Any]]]:
    """One row per visited state; the last state of a rollout has no input."""
    if not rollouts:
        return ["seed", "step", "cell_id", "target_id", "stage_cost", "value_at_state"], []
    n_x = rollouts[0].states.shape[1]
    n_u = rollouts[0].inputs.shape[1]
    columns = (["seed", "step"] + [f"x{k}" for k in range(n_x)] + [f"u{k}" for k in range(n_u)]
               + ["cell_id", "target_id", "stage_cost", "value_at_state"])
    rows = []
    for run in rollouts:
        for step, state in enumerate(run.states):
            row = {"seed": run.seed, "step": step, "value_at_state": float(run.values[step])}
            row.update({f"x{k}": float(state[k]) for k in range(n_x)})
            if step < run.steps:
                row.update({f"u{k}": float(run.inputs[step, k]) for k in range(n_u)})
                row["cell_id"], row["target_id"] = run.cells[step]
                row["stage_cost"] = float(run.stage_costs[step])
            rows.append(row)
    return columns, rows


@dataclass
class ExperimentArtifacts:
    abstraction_path: Path
    values_path: Path
    value_grid_path: Path
    trajectories_path: Path
    summary_path: Path
    summary: ExperimentSummaryRecord
    passed: bool
    failures: List[str] = field(default_factory=list)


def _avoids(states: np.ndarray, obstacles) -> bool:
    return not any(o.contains(x) for x in states for o in obstacles)


def run_optimal_control_experiment(config: ExperimentConfig, out_dir, workers: int = 1,
                                   seeds: Optional[Sequence[int]] = None,
                                   progress: bool = False) -> ExperimentArtifacts:
    """Build, plan, simulate and certify; every step's artifact lands in out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    system = config.system.to_system()
    cost = config.system.to_cost()
    goal = region_of(config.goal)
    obstacles = [region_of(o) for o in config.obstacles]
    seeds = list(range(config.rollouts)) if seeds is None else list(seeds)
    failures: List[str] = []

    started = time.perf_counter()
    cover = build_cover(system.domain, config.radius, system)
    graph = build_abstraction(system, cover, goal, obstacles, cost, workers=workers, progress=progress)
    build_seconds = time.perf_counter() - started
    abstraction_path = out_dir / "abstraction.json"
    size = save_abstraction(graph, abstraction_path)

    vf = reverse_dijkstra(graph)
    bellman = check_bellman(graph, vf)
    if not bellman.passed:
        failures.append(f"bellman check failed on {len(bellman.violations)} cells")
    values_path = write_values_csv(vf, cover, out_dir / "values.csv")
    grid_columns, grid = value_grid(vf, cover)
    value_grid_path = emit_plot_data(grid, out_dir / "value_grid.csv", grid_columns)

    x0 = config.start_state()
    start_value = concretize_value(vf, cover, x0)
    runs: List[Rollout] = []
    summaries: List[RolloutSummaryRecord] = []
    if math.isfinite(start_value):
        def simulate(seed: int) -> Rollout:
            return rollout(system, cover, graph, vf, cost, x0, seed,
                           max_steps=config.max_steps, noise=config.noise)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                runs = list(executor.map(simulate, seeds))
        else:
            runs = [simulate(seed) for seed in seeds]
        for run in runs:
            certified = run.reached_goal and certify_cost(run, vf, cover).passed
            avoided = _avoids(run.states, obstacles)
            if not (certified and avoided):
                failures.append(f"rollout seed {run.seed}: certified={certified} avoided={avoided}")
            summaries.append(RolloutSummaryRecord(
                seed=run.seed, steps=run.steps, reached_goal=run.reached_goal, total_cost=run.total_cost,
                start_value=start_value, certified=certified, avoided_obstacles=avoided,
            ))
    else:
        failures.append("start state has no finite value")
        logger.warning("start_unreachable", x0=x0.tolist())

    columns, rows = trajectory_rows(runs)
    trajectories_path = emit_plot_data(rows, out_dir / "trajectories.csv", columns)

    equilibria = []
    for mode in system.modes:
        try:
            equilibria.append(affine_equilibrium(mode).tolist())
        except DomainError:
            equilibria.append(None)
    summary = ExperimentSummaryRecord(
        cells=len(cover),
        edges=len(graph.edges),
        blocked_cells=len(graph.blocked_ids),
        goal_cells=len(graph.goal_ids),
        build_seconds=build_seconds,
        abstraction_bytes=size,
        finite_cells=len(vf.finite_ids),
        x0=x0.tolist(),
        start_value=start_value if math.isfinite(start_value) else None,
        equilibria=equilibria,
        rollouts=summaries,
    )
    summary_path = out_dir / "summary.json"
    summary_path.write_text(summary.model_dump_json(indent=2))
    logger.info("experiment_finished", edges=len(graph.edges), start_value=summary.start_value,
                rollouts=len(runs), failures=len(failures))
    return ExperimentArtifacts(abstraction_path, values_path, value_grid_path, trajectories_path,
                               summary_path, summary, not failures, failures)
