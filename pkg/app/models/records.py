from typing import List, Literal, Optional

from pydantic import BaseModel, Field

SCHEMA_VERSION = 1


class DiagnosticsRecord(BaseModel):
    status: str = Field(..., description="Solver status of the transition SDP")
    iterations: int = Field(0, ge=0)
    margin: Optional[float] = Field(None, description="Phase-1 feasibility margin")
    min_eig_slack: float = 0.0
    duality_gap: float = 0.0
    solve_time: float = Field(0.0, ge=0.0, description="Wall-clock seconds")
    boundary_multipliers: List[str] = Field(default_factory=list)


class ControllerRecord(BaseModel):
    """kappa(x) = K (x - center) + l with its certificate."""

    K: List[List[float]]
    l: List[float]
    center: List[float]
    cost_bound: float = Field(..., ge=0.0)
    beta: List[float]
    tau: List[float]
    gamma: float
    diagnostics: DiagnosticsRecord


class EdgeRecord(BaseModel):
    edge_id: int = Field(..., ge=0)
    source: int = Field(..., ge=0)
    target: int = Field(..., ge=0)
    controller: ControllerRecord


class CoverRecord(BaseModel):
    centers: List[List[float]]
    radius: float = Field(..., gt=0.0)
    grid_spacing: float = Field(..., gt=0.0)
    grid_shape: List[int]
    mode_of_cell: List[int]


class AbstractionRecord(BaseModel):
    schema_version: int = SCHEMA_VERSION
    cover: CoverRecord
    edges: List[EdgeRecord]
    goal_ids: List[int]
    blocked_ids: List[int]


class AuditRecord(BaseModel):
    passed: bool
    samples: int
    worst_successor: float
    worst_input: float
    worst_cost: float
    cost_bound: float
    witness: Optional[List[float]] = None


class TransitionRecord(BaseModel):
    """Output of a single-transition synthesis."""

    status: Literal["optimal", "infeasible", "numerical_failure"]
    margin: Optional[float] = None
    controller: Optional[ControllerRecord] = None
    spectral_radius: Optional[float] = None
    audit: Optional[AuditRecord] = None


class SweepRowRecord(BaseModel):
    nu: float
    eta: float
    omega_max: float
    feasible: bool
    cost_bound: Optional[float] = None
    spectral_radius: Optional[float] = None
    status: str
    solve_time: float = 0.0
    audit_passed: Optional[bool] = None


class RolloutSummaryRecord(BaseModel):
    seed: int
    steps: int
    reached_goal: bool
    total_cost: float
    start_value: float
    certified: bool
    avoided_obstacles: bool


class ExperimentSummaryRecord(BaseModel):
    cells: int
    edges: int
    blocked_cells: int
    goal_cells: int
    build_seconds: float
    abstraction_bytes: int
    finite_cells: int
    x0: List[float]
    start_value: Optional[float] = Field(None, description="None when x0 cannot reach the goal")
    equilibria: List[Optional[List[float]]]
    rollouts: List[RolloutSummaryRecord]
