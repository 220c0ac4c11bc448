from typing import Any, Callable, Dict

import numpy as np
from pydantic import BaseModel

from app.abstraction import reach_overapprox
from app.experiments import (
    SweepSpec,
    run_single_transition_sweep,
    run_transition,
    sweep_columns,
    transition_problem_from_config,
)
from app.lmi_synthesis import Ellipsoid, closed_loop_spectral_radius
from app.models.requests import (
    ReachOverapproxPayload,
    RunSweepPayload,
    SpectralRadiusPayload,
    SuccessorVerticesPayload,
    SynthesizeTransitionPayload,
)
from app.pwa_model import AffineMode, successor_vertices


def _synthesize_transition(payload: SynthesizeTransitionPayload) -> Dict[str, Any]:
    return run_transition(transition_problem_from_config(payload)).model_dump()


def _successor_vertices(payload: SuccessorVerticesPayload) -> Dict[str, Any]:
    system = payload.system.to_system()
    vertices = successor_vertices(system, np.array(payload.x), np.array(payload.u), payload.mode)
    return {"vertices": vertices.tolist()}


def _spectral_radius(payload: SpectralRadiusPayload) -> Dict[str, Any]:
    A = np.array(payload.A, dtype=float)
    mode = AffineMode(A, np.array(payload.B, dtype=float), np.zeros(A.shape[0]))
    return {"spectralRadius": closed_loop_spectral_radius(mode, payload.K)}


def _reach_overapprox(payload: ReachOverapproxPayload) -> Dict[str, Any]:
    cell = Ellipsoid.ball(np.array(payload.center), payload.radius)
    ball = reach_overapprox(cell, payload.mode.to_mode(), payload.input_box.to_box(), payload.noise_box.to_box())
    return {"center": ball.center.tolist(), "radius": ball.radius}


def _run_sweep(payload: RunSweepPayload) -> Dict[str, Any]:
    rows = run_single_transition_sweep(SweepSpec.from_config(payload))
    columns = sweep_columns(payload.with_timing)
    return {"columns": columns, "rows": [row.model_dump(include=set(columns)) for row in rows]}


class DecisionMapper:
    """Maps an operationType to the toolkit call that serves it."""

    def __init__(self):
        self._routes: Dict[str, Callable[[BaseModel], Dict[str, Any]]] = {
            "SynthesizeTransition": _synthesize_transition,
            "SuccessorVertices": _successor_vertices,
            "SpectralRadius": _spectral_radius,
            "ReachOverapprox": _reach_overapprox,
            "RunSweep": _run_sweep,
        }

    def execute(self, operation_type: str, validated_payload: BaseModel) -> Dict[str, Any]:
        """Execute the toolkit call with an already validated payload."""
        return self._routes[operation_type](validated_payload)
