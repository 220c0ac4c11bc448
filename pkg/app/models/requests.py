from typing import Literal, Optional
from uuid import uuid4

from pydantic import BaseModel, Field

from app.models.system import (
    BoxConfig,
    Matrix,
    ModeConfig,
    SweepConfig,
    SystemConfig,
    TransitionProblemConfig,
    Vector,
)


class SynthesizeTransitionPayload(TransitionProblemConfig):
    """Synthesize and audit kappa(x) = K(x - c) + l between two ellipsoids."""


class SuccessorVerticesPayload(BaseModel):
    """Vertices of F(x, u) for one state and input."""
    system: SystemConfig
    x: Vector
    u: Vector
    mode: Optional[int] = Field(None, ge=0, description="Overrides the partition lookup")


class SpectralRadiusPayload(BaseModel):
    """rho(A + B K)"""
    A: Matrix
    B: Matrix
    K: Matrix


class ReachOverapproxPayload(BaseModel):
    """Growth-bound ball around the image of a ball cell."""
    mode: ModeConfig
    center: Vector
    radius: float = Field(..., gt=0.0)
    input_box: BoxConfig
    noise_box: BoxConfig


class RunSweepPayload(SweepConfig):
    """Single-transition sweep over (nu, eta, omega_max)."""
    with_timing: bool = False


OPERATION_PAYLOAD_MAP = {
    "SynthesizeTransition": SynthesizeTransitionPayload,
    "SuccessorVertices": SuccessorVerticesPayload,
    "SpectralRadius": SpectralRadiusPayload,
    "ReachOverapprox": ReachOverapproxPayload,
    "RunSweep": RunSweepPayload,
}

VALID_OPERATIONS = set(OPERATION_PAYLOAD_MAP.keys())


class JobRequest(BaseModel):
    operationType: Literal[
        "SynthesizeTransition",
        "SuccessorVertices",
        "SpectralRadius",
        "ReachOverapprox",
        "RunSweep",
    ] = Field(..., description="Type of operation to execute")

    requestId: Optional[str] = Field(
        default_factory=lambda: str(uuid4()),
        description="Unique request ID (auto-generated if not provided)"
    )

    payload: dict = Field(
        ...,
        description="Operation-specific payload"
    )

    class Config:
        json_schema_extra = {
            "example": {
                "operationType": "SpectralRadius",
                "payload": {
                    "A": [[2.0]],
                    "B": [[1.0]],
                    "K": [[-1.0]]
                }
            }
        }
