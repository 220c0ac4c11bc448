from pathlib import Path

import numpy as np
import pytest

from app.abstraction import AbstractionGraph, Edge, build_cover
from app.experiments import transition_problem_from_config
from app.lmi_synthesis import TransitionController
from app.models.system import ExperimentConfig, SweepConfig, TransitionProblemConfig
from app.pwa_model import AffineMode, BallRegion, Box, CostModel, PartitionRegion, PwaSystem
from app.utils.validators import load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def configs_dir() -> Path:
    return CONFIGS


@pytest.fixture
def scalar_problem():
    """x+ = 2x + u between unit balls at 0, |u| <= 10, J = x^2 + u^2."""
    return transition_problem_from_config(load_config(CONFIGS / "scalar_transition.json", TransitionProblemConfig))


@pytest.fixture
def sweep_config() -> SweepConfig:
    return load_config(CONFIGS / "triple_integrator_sweep.json", SweepConfig)


@pytest.fixture
def spiral_config() -> ExperimentConfig:
    return load_config(CONFIGS / "spiral_pwa.json", ExperimentConfig)


@pytest.fixture
def spiral_system(spiral_config) -> PwaSystem:
    return spiral_config.system.to_system()


@pytest.fixture
def line_system() -> PwaSystem:
    """x+ = 0.5x + u + w on [-2, 2], |u| <= 1, |w| <= 0.01."""
    return PwaSystem(
        modes=(AffineMode(np.array([[0.5]]), np.array([[1.0]]), np.zeros(1)),),
        partition=(PartitionRegion(),),
        domain=Box(np.array([-2.0]), np.array([2.0])),
        input_box=Box.symmetric([1.0]),
        noise_boxes=(Box.symmetric([0.01]),),
    )


@pytest.fixture
def line_cost() -> CostModel:
    return CostModel.from_matrix(np.diag([1.0, 0.0, 0.0]))


def deadbeat_controller(center: float, target: float, cost_bound: float) -> TransitionController:
    """kappa(x) = -0.5(x - c) + (c+ - 0.5c) sends the whole cell to c+ before noise."""
    return TransitionController(
        K=np.array([[-0.5]]),
        l=np.array([target - 0.5 * center]),
        center=np.array([center]),
        cost_bound=cost_bound,
        beta=np.array([0.5, 0.5]),
        tau=np.array([0.5]),
        gamma=0.5,
    )


@pytest.fixture
def line_graph(line_system) -> AbstractionGraph:
    """Cells at -2, -1, 0, 1, 2 (ids 0..4) with radius 0.5, goal cell 2, edges toward the middle."""
    cover = build_cover(line_system.domain, 0.5, line_system)
    pairs = [(4, 3), (3, 2), (0, 1), (1, 2)]
    edges = []
    for source, target in pairs:
        c, t = cover.centers[source, 0], cover.centers[target, 0]
        bound = (abs(c) + 0.5) ** 2
        edges.append(Edge(len(edges), source, target, deadbeat_controller(c, t, bound)))
    return AbstractionGraph(cover, tuple(edges), frozenset({2}), frozenset())


@pytest.fixture
def line_goal() -> BallRegion:
    return BallRegion(np.zeros(1), 0.5)


def line_experiment(rollouts: int = 3) -> ExperimentConfig:
    """line_system as an experiment: goal ball at the origin, start near x = 1.9."""
    return ExperimentConfig.model_validate({
        "system": {
            "modes": [{"A": [[0.5]], "B": [[1.0]]}],
            "domain": {"lower": [-2.0], "upper": [2.0]},
            "input_box": {"lower": [-1.0], "upper": [1.0]},
            "noise_box": {"lower": [-0.01], "upper": [0.01]},
            "cost_Q": [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        },
        "radius": 0.5,
        "goal": {"kind": "ball", "center": [0.0], "radius": 0.5},
        "initial": {"kind": "box", "lower": [1.8], "upper": [2.0]},
        "rollouts": rollouts,
    })
