"""JSON schemas of system definitions, experiments and sweeps."""
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from app.lmi_synthesis import Ellipsoid
from app.pwa_model import (
    AffineMode,
    AxisConstraint,
    BallRegion,
    Box,
    CostModel,
    PartitionRegion,
    PwaSystem,
)

Matrix = List[List[float]]
Vector = List[float]


class BoxConfig(BaseModel):
    kind: Literal["box"] = "box"
    lower: Vector
    upper: Vector

    @model_validator(mode="after")
    def _ordered(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper must have the same length")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("lower bound exceeds upper bound")
        return self

    def to_box(self) -> Box:
        return Box(np.array(self.lower), np.array(self.upper))


class BallConfig(BaseModel):
    kind: Literal["ball"]
    center: Vector
    radius: float = Field(..., ge=0.0)

    def to_ball(self) -> BallRegion:
        return BallRegion(np.array(self.center), self.radius)


RegionConfig = Annotated[Union[BoxConfig, BallConfig], Field(discriminator="kind")]


def region_of(config: Union[BoxConfig, BallConfig]):
    return config.to_box() if isinstance(config, BoxConfig) else config.to_ball()


class ConstraintConfig(BaseModel):
    axis: int = Field(..., ge=0)
    op: Literal["<=", "<", ">=", ">"]
    bound: float

    def to_constraint(self) -> AxisConstraint:
        return AxisConstraint(self.axis, self.op, self.bound)


class ModeConfig(BaseModel):
    A: Matrix
    B: Matrix
    g: Optional[Vector] = None
    region: List[ConstraintConfig] = Field(default_factory=list, description="Conjunction; empty is everywhere")
    noise_box: Optional[BoxConfig] = Field(None, description="Overrides the system-wide noise box")

    def to_mode(self) -> AffineMode:
        g = np.zeros(len(self.A)) if self.g is None else np.array(self.g)
        return AffineMode(np.array(self.A), np.array(self.B), g)

    def to_partition(self) -> PartitionRegion:
        return PartitionRegion(tuple(c.to_constraint() for c in self.region))


class SystemConfig(BaseModel):
    modes: List[ModeConfig] = Field(..., min_length=1)
    domain: BoxConfig
    input_box: BoxConfig
    noise_box: Optional[BoxConfig] = None
    cost_Q: Matrix

    @model_validator(mode="after")
    def _noise_defined(self):
        if self.noise_box is None and any(m.noise_box is None for m in self.modes):
            raise ValueError("every mode needs a noise box when no system-wide noise_box is given")
        return self

    def to_system(self) -> PwaSystem:
        return PwaSystem(
            modes=tuple(m.to_mode() for m in self.modes),
            partition=tuple(m.to_partition() for m in self.modes),
            domain=self.domain.to_box(),
            input_box=self.input_box.to_box(),
            noise_boxes=tuple((m.noise_box or self.noise_box).to_box() for m in self.modes),
        )

    def to_cost(self) -> CostModel:
        return CostModel.from_matrix(np.array(self.cost_Q))


class ExperimentConfig(BaseModel):
    system: SystemConfig
    radius: float = Field(..., gt=0.0)
    goal: RegionConfig
    initial: RegionConfig
    obstacles: List[RegionConfig] = Field(default_factory=list)
    rollouts: int = Field(100, ge=0)
    x0: Optional[Vector] = Field(None, description="Defaults to the center of the initial region")
    noise: str = "uniform"
    max_steps: Optional[int] = Field(None, ge=1)

    def start_state(self) -> np.ndarray:
        if self.x0 is not None:
            return np.array(self.x0, dtype=float)
        region = region_of(self.initial)
        return region.center.copy()


class EllipsoidConfig(BaseModel):
    P: Optional[Matrix] = None
    center: Vector
    radius: Optional[float] = Field(None, gt=0.0, description="Ball shortcut when P is omitted")

    @model_validator(mode="after")
    def _one_shape(self):
        if (self.P is None) == (self.radius is None):
            raise ValueError("give exactly one of P or radius")
        return self

    def to_ellipsoid(self) -> Ellipsoid:
        if self.P is None:
            return Ellipsoid.ball(np.array(self.center), self.radius)
        return Ellipsoid(np.array(self.P), np.array(self.center))


class TransitionProblemConfig(BaseModel):
    """A single source/target synthesis problem."""

    mode: ModeConfig
    source: EllipsoidConfig
    target: EllipsoidConfig
    input_box: BoxConfig
    noise_box: BoxConfig
    cost_Q: Matrix


class SweepConfig(BaseModel):
    Ac: Matrix
    Bc: Matrix
    sample_time: float = Field(..., gt=0.0)
    input_bound: float = Field(..., gt=0.0)
    P0: Matrix
    center: Vector
    target_center: Vector
    cost_Q: Optional[Matrix] = Field(None, description="Defaults to x'x + u'u")
    nu: List[float] = Field(..., min_length=1)
    eta: List[float] = Field(..., min_length=1)
    omega_max: List[float] = Field(..., min_length=1)

    @field_validator("nu", "eta", "omega_max")
    @classmethod
    def _positive(cls, values: List[float]) -> List[float]:
        if any(v <= 0.0 for v in values):
            raise ValueError("grid values must be positive")
        return values
