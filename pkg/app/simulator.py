"""Closed-loop rollouts of the concrete PWA system under the abstraction policy."""
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import structlog

from app.abstraction import AbstractionGraph, CellCover
from app.adapters.manager import get_noise_model
from app.config import settings
from app.errors import CertificationError, CertifiedTransitionError, ContractError, PolicyError
from app.planner import ValueFunction, concretize_value, policy_lookup
from app.pwa_model import CostModel, PwaSystem, stage_cost

logger = structlog.get_logger()

CERTIFICATE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Rollout:
    states: np.ndarray
    inputs: np.ndarray
    cells: Tuple[Tuple[int, int], ...]
    stage_costs: np.ndarray
    values: np.ndarray
    reached_goal: bool
    total_cost: float
    seed: int
    status: str

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]


def rollout(system: PwaSystem, cover: CellCover, graph: AbstractionGraph, vf: ValueFunction,
            cost: CostModel, x0, seed: int, max_steps: Optional[int] = None,
            noise: str = "uniform", tol: Optional[float] = None) -> Rollout:
    """Run the policy from x0 until a goal cell is entered or max_steps elapse.

    Each step uses the mode of the cell whose controller is applied. Leaving
    the planned target cell or the input box raises CertifiedTransitionError.
    """
    max_steps = settings.ROLLOUT_MAX_STEPS if max_steps is None else max_steps
    tol = settings.CONTAINMENT_TOL if tol is None else tol
    if max_steps < 1:
        raise ContractError("max_steps must be at least 1")
    x = np.asarray(x0, dtype=float)
    if not math.isfinite(concretize_value(vf, cover, x)):
        raise PolicyError("initial state has no finite value", {"x0": x.tolist()})

    model = get_noise_model(noise)
    rng = np.random.default_rng(seed)
    states, inputs, cells, costs, values = [x], [], [], [], [concretize_value(vf, cover, x)]
    reached = False

    for step in range(max_steps + 1):
        decision = policy_lookup(vf, cover, graph, x)
        if decision is None:
            reached = True
            break
        if step == max_steps:
            break
        mode_index = cover.mode_of_cell[decision.cell_id]
        mode = system.modes[mode_index]
        target = cover.cell(decision.target)
        u = decision.control(x)
        if not system.input_box.contains(u, tol=tol):
            raise CertifiedTransitionError(
                f"input leaves the input box at step {step}",
                {"step": step, "u": u.tolist(), "cell_id": decision.cell_id, "edge_id": decision.edge.edge_id},
            )
        nominal = mode.nominal(x, u)
        x_next = nominal + model.draw(system.noise_boxes[mode_index], nominal, target, rng)
        membership = target.value(x_next)
        if membership > 1.0 + tol:
            raise CertifiedTransitionError(
                f"successor escapes certified target cell {decision.target} at step {step}",
                {"step": step, "x": x.tolist(), "x_next": x_next.tolist(), "membership": membership,
                 "edge_id": decision.edge.edge_id},
            )
        inputs.append(u)
        cells.append((decision.cell_id, decision.target))
        costs.append(stage_cost(cost, x, u))
        x = x_next
        states.append(x)
        values.append(concretize_value(vf, cover, x))

    n_u = system.n_u
    result = Rollout(
        states=np.array(states),
        inputs=np.array(inputs).reshape(-1, n_u),
        cells=tuple(cells),
        stage_costs=np.array(costs, dtype=float),
        values=np.array(values, dtype=float),
        reached_goal=reached,
        total_cost=float(np.sum(costs)),
        seed=seed,
        status="reached_goal" if reached else "max_steps",
    )
    logger.info("rollout_finished", seed=seed, steps=result.steps, status=result.status,
                total_cost=result.total_cost, start_value=values[0])
    return result


@dataclass(frozen=True)
class CostCertificate:
    passed: bool
    total_cost: float
    bound: float
    failed_step: Optional[int] = None
    message: str = ""

    def raise_for_failure(self) -> None:
        if not self.passed:
            raise CertificationError(self.message, {"step": self.failed_step, "total_cost": self.total_cost,
                                                    "bound": self.bound})


def certify_cost(trajectory: Rollout, vf: ValueFunction, cover: CellCover,
                 tol: float = CERTIFICATE_TOL) -> CostCertificate:
    """total cost <= v(x0) and v(x_k) >= J_k + v(x_k+1) along the trajectory."""
    if not trajectory.reached_goal:
        raise ContractError("cost certification needs a rollout that reached the goal",
                            {"status": trajectory.status, "seed": trajectory.seed})
    values = [concretize_value(vf, cover, x) for x in trajectory.states]
    bound = values[0]
    for step, stage in enumerate(trajectory.stage_costs):
        if values[step] < stage + values[step + 1] - tol:
            return CostCertificate(
                False, trajectory.total_cost, bound, step,
                f"value decrease at step {step} is smaller than the stage cost",
            )
    if trajectory.total_cost > bound + tol:
        return CostCertificate(
            False, trajectory.total_cost, bound, None,
            f"total cost {trajectory.total_cost:.6g} exceeds the guaranteed bound {bound:.6g}",
        )
    return CostCertificate(True, trajectory.total_cost, bound)
