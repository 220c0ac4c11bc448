"""Affine state-feedback transitions between ellipsoidal cells.

For a mode (A, B, g), a source ellipsoid Bs = {x : (x-c)'P(x-c) <= 1} and a target
Bf = {x : (x-c+)'P+(x-c+) <= 1}, we look for kappa(x) = K(x - c) + l such that every
x in Bs is mapped into Bf for every noise vertex, kappa stays in the input set, and
the stage cost on Bs is bounded by J. Each requirement is an S-procedure LMI:

    containment, per noise vertex w_i (mu_i = g + A c + B l + w_i - c+):
        [[beta_i P, 0, (A+BK)'], [0, 1-beta_i, mu_i'], [A+BK, mu_i, inv(P+)]] >= 0
    input set, per row U_i:
        [[tau_i P, 0, K'U_i'], [0, 1-tau_i, l'U_i'], [U_i K, U_i l, I]] >= 0
    cost bound, with Q = L'L:
        [[gamma P, 0, (L[I;K;0])'], [0, J-gamma, (L[c;l;1])'], [L[I;K;0], L[c;l;1], I]] >= 0

Decision vector layout: vec(K) column-major, l, beta, tau, gamma, J.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import structlog

from app.config import settings
from app.errors import AssemblyError, AuditFailure, ContractError, DimensionError, NumericalFailure
from app.models.records import AuditRecord, ControllerRecord, DiagnosticsRecord
from app.pwa_model import AffineMode, CostModel, stage_costs
from app.sdp_solver import (
    LinearSdp,
    SdpBlock,
    SdpStatus,
    SolverTolerances,
    feasibility_margin,
    min_eigenvalue,
    solve,
)

logger = structlog.get_logger()

BOUNDARY_MULTIPLIER_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """{x : (x - c)' P (x - c) <= 1}."""

    P: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        c = np.array(self.c, dtype=float).reshape(-1)
        if P.shape != (c.shape[0], c.shape[0]):
            raise DimensionError(f"shape matrix {P.shape} does not match center of length {c.shape[0]}")
        if min_eigenvalue(P) <= 0.0:
            raise ContractError("ellipsoid shape matrix must be positive definite")
        P.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "c", c)

    @classmethod
    def ball(cls, center, radius: float) -> "Ellipsoid":
        if radius <= 0.0:
            raise ContractError("ball radius must be positive")
        center = np.asarray(center, dtype=float).reshape(-1)
        return cls(np.eye(center.shape[0]) / radius**2, center)

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @property
    def is_ball(self) -> bool:
        return bool(np.allclose(self.P, self.P[0, 0] * np.eye(self.dim), rtol=1e-12, atol=0.0))

    @property
    def radius(self) -> float:
        if not self.is_ball:
            raise ContractError("radius is only defined for balls")
        return float(1.0 / np.sqrt(self.P[0, 0]))

    def value(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.c
        return float(d @ self.P @ d)

    def values(self, xs: np.ndarray) -> np.ndarray:
        d = np.asarray(xs, dtype=float) - self.c
        return np.einsum("...i,ij,...j->...", d, self.P, d)

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.value(x) <= 1.0 + tol

    def inverse_sqrt(self) -> np.ndarray:
        eigvals, eigvecs = np.linalg.eigh(self.P)
        return (eigvecs / np.sqrt(eigvals)) @ eigvecs.T

    def scaled_shape(self, factor: float) -> "Ellipsoid":
        """Same center, shape matrix multiplied by `factor`."""
        return Ellipsoid(factor * self.P, self.c)


@dataclass(frozen=True)
class DecisionLayout:
    n_x: int
    n_u: int
    n_noise: int
    n_input: int
    with_cost: bool = True

    @property
    def l_offset(self) -> int:
        return self.n_u * self.n_x

    @property
    def beta_offset(self) -> int:
        return self.l_offset + self.n_u

    @property
    def tau_offset(self) -> int:
        return self.beta_offset + self.n_noise

    @property
    def gamma_index(self) -> int:
        return self.tau_offset + self.n_input

    @property
    def cost_index(self) -> int:
        return self.gamma_index + 1

    @property
    def num_vars(self) -> int:
        return self.gamma_index + (2 if self.with_cost else 0)

    def K_index(self, row: int, col: int) -> int:
        return col * self.n_u + row

    def unpack(self, y: np.ndarray) -> dict:
        K = y[: self.l_offset].reshape(self.n_x, self.n_u).T
        unpacked = {
            "K": K,
            "l": y[self.l_offset:self.beta_offset],
            "beta": y[self.beta_offset:self.tau_offset],
            "tau": y[self.tau_offset:self.gamma_index],
        }
        if self.with_cost:
            unpacked["gamma"] = float(y[self.gamma_index])
            unpacked["cost_bound"] = float(y[self.cost_index])
        return unpacked


@dataclass(frozen=True)
class SynthesisDiagnostics:
    status: str
    iterations: int = 0
    margin: Optional[float] = None
    min_eig_slack: float = 0.0
    duality_gap: float = 0.0
    solve_time: float = 0.0
    boundary_multipliers: Tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class TransitionController:
    """kappa(x) = K (x - center) + l, certified for one source/target pair."""

    K: np.ndarray
    l: np.ndarray
    center: np.ndarray
    cost_bound: float
    beta: np.ndarray
    tau: np.ndarray
    gamma: float
    diagnostics: SynthesisDiagnostics = field(default_factory=lambda: SynthesisDiagnostics("optimal"))

    def control(self, x) -> np.ndarray:
        return self.K @ (np.asarray(x, dtype=float) - self.center) + self.l

    def controls(self, xs: np.ndarray) -> np.ndarray:
        return (np.asarray(xs, dtype=float) - self.center) @ self.K.T + self.l


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    status: SdpStatus
    controller: Optional[TransitionController]
    margin: Optional[float] = None

    @property
    def feasible(self) -> bool:
        return self.controller is not None


def _stable_inverse(P: np.ndarray, condition_cap: float) -> np.ndarray:
    eigvals = np.linalg.eigvalsh(P)
    if eigvals[0] <= 0.0 or eigvals[-1] / eigvals[0] > condition_cap:
        raise AssemblyError(
            "target shape matrix is too ill-conditioned to invert",
            {"condition_number": float(eigvals[-1] / eigvals[0]) if eigvals[0] > 0 else None},
        )
    factor = scipy.linalg.cho_factor(P, lower=True)
    inverse = scipy.linalg.cho_solve(factor, np.eye(P.shape[0]))
    return 0.5 * (inverse + inverse.T)


def _symmetric_set(M: np.ndarray, rows: slice, cols, value) -> None:
    M[rows, cols] = value
    M[cols, rows] = np.asarray(value).T


def _check_dims(mode: AffineMode, Bs: Ellipsoid, Bf: Ellipsoid, noise_vertices: np.ndarray,
                input_rows: Sequence[np.ndarray]) -> None:
    if Bs.dim != mode.n_x or Bf.dim != mode.n_x:
        raise DimensionError("cell dimension does not match the state dimension")
    if noise_vertices.ndim != 2 or noise_vertices.shape[1] != mode.n_x:
        raise DimensionError("noise vertices must be rows of state dimension")
    for row in input_rows:
        if row.ndim != 2 or row.shape[1] != mode.n_u:
            raise DimensionError("input rows must have n_u columns")


def layout_for(mode: AffineMode, noise_vertices: np.ndarray, input_rows: Sequence[np.ndarray],
               with_cost: bool = True) -> DecisionLayout:
    return DecisionLayout(mode.n_x, mode.n_u, noise_vertices.shape[0], len(input_rows), with_cost)


def assemble_transition_lmis(mode: AffineMode, Bs: Ellipsoid, Bf: Ellipsoid, noise_vertices,
                             input_rows: Sequence[np.ndarray],
                             layout: Optional[DecisionLayout] = None) -> List[SdpBlock]:
    """Containment blocks (one per noise vertex) followed by input blocks (one per row)."""
    noise_vertices = np.atleast_2d(np.asarray(noise_vertices, dtype=float))
    input_rows = [np.atleast_2d(np.asarray(row, dtype=float)) for row in input_rows]
    _check_dims(mode, Bs, Bf, noise_vertices, input_rows)
    layout = layout or layout_for(mode, noise_vertices, input_rows)
    n_x, n_u, m = mode.n_x, mode.n_u, layout.num_vars
    Pf_inv = _stable_inverse(Bf.P, settings.PINV_CONDITION_CAP)
    top, mid = slice(0, n_x), n_x

    blocks = []
    d = 2 * n_x + 1
    bot = slice(n_x + 1, d)
    for i, w in enumerate(noise_vertices):
        F0 = np.zeros((d, d))
        F = np.zeros((m, d, d))
        F0[mid, mid] = 1.0
        _symmetric_set(F0, bot, top, mode.A)
        mu0 = mode.g + mode.A @ Bs.c + w - Bf.c
        _symmetric_set(F0, bot, mid, mu0)
        F0[bot, bot] = Pf_inv
        beta = layout.beta_offset + i
        F[beta][top, top] = Bs.P
        F[beta][mid, mid] = -1.0
        for r in range(n_u):
            for col in range(n_x):
                E = np.zeros((n_x, n_x))
                E[:, col] = mode.B[:, r]
                _symmetric_set(F[layout.K_index(r, col)], bot, top, E)
            _symmetric_set(F[layout.l_offset + r], bot, mid, mode.B[:, r])
        blocks.append(SdpBlock(F0, F, f"containment[{i}]"))

    for i, U in enumerate(input_rows):
        p = U.shape[0]
        d = n_x + 1 + p
        bot = slice(n_x + 1, d)
        F0 = np.zeros((d, d))
        F = np.zeros((m, d, d))
        F0[mid, mid] = 1.0
        F0[bot, bot] = np.eye(p)
        tau = layout.tau_offset + i
        F[tau][top, top] = Bs.P
        F[tau][mid, mid] = -1.0
        for r in range(n_u):
            for col in range(n_x):
                E = np.zeros((p, n_x))
                E[:, col] = U[:, r]
                _symmetric_set(F[layout.K_index(r, col)], bot, top, E)
            _symmetric_set(F[layout.l_offset + r], bot, mid, U[:, r])
        blocks.append(SdpBlock(F0, F, f"input[{i}]"))
    return blocks


def assemble_cost_lmi(cost: CostModel, Bs: Ellipsoid, layout: DecisionLayout) -> SdpBlock:
    n_x, n_u = layout.n_x, layout.n_u
    if cost.dim != n_x + n_u + 1:
        raise DimensionError(f"Q has size {cost.dim}, expected {n_x + n_u + 1}")
    if not layout.with_cost:
        raise ContractError("layout carries no cost variables")
    L = cost.L
    q = L.shape[0]
    Lx, Lu, L1 = L[:, :n_x], L[:, n_x:n_x + n_u], L[:, -1]
    d = n_x + 1 + q
    top, mid, bot = slice(0, n_x), n_x, slice(n_x + 1, d)
    m = layout.num_vars

    F0 = np.zeros((d, d))
    F = np.zeros((m, d, d))
    if q:
        _symmetric_set(F0, bot, top, Lx)
        _symmetric_set(F0, bot, mid, Lx @ Bs.c + L1)
        F0[bot, bot] = np.eye(q)
        for r in range(n_u):
            for col in range(n_x):
                E = np.zeros((q, n_x))
                E[:, col] = Lu[:, r]
                _symmetric_set(F[layout.K_index(r, col)], bot, top, E)
            _symmetric_set(F[layout.l_offset + r], bot, mid, Lu[:, r])
    F[layout.gamma_index][top, top] = Bs.P
    F[layout.gamma_index][mid, mid] = -1.0
    F[layout.cost_index][mid, mid] = 1.0
    return SdpBlock(F0, F, "cost")


def transition_feasible(mode: AffineMode, Bs: Ellipsoid, Bf: Ellipsoid, noise_vertices,
                        input_rows: Sequence[np.ndarray],
                        tolerances: Optional[SolverTolerances] = None) -> float:
    """Phase-1 margin of the containment and input LMIs alone (no cost block)."""
    noise_vertices = np.atleast_2d(np.asarray(noise_vertices, dtype=float))
    layout = layout_for(mode, noise_vertices, input_rows, with_cost=False)
    blocks = assemble_transition_lmis(mode, Bs, Bf, noise_vertices, input_rows, layout)
    problem = LinearSdp(np.zeros(layout.num_vars), tuple(blocks))
    return feasibility_margin(problem, tolerances)


def build_transition_problem(mode: AffineMode, Bs: Ellipsoid, Bf: Ellipsoid, noise_vertices,
                             input_rows: Sequence[np.ndarray], cost: CostModel) -> Tuple[LinearSdp, DecisionLayout]:
    noise_vertices = np.atleast_2d(np.asarray(noise_vertices, dtype=float))
    layout = layout_for(mode, noise_vertices, input_rows)
    blocks = assemble_transition_lmis(mode, Bs, Bf, noise_vertices, input_rows, layout)
    blocks.append(assemble_cost_lmi(cost, Bs, layout))
    objective = np.zeros(layout.num_vars)
    objective[layout.cost_index] = 1.0
    return LinearSdp(objective, tuple(blocks)), layout


def synthesize_transition(mode: AffineMode, Bs: Ellipsoid, Bf: Ellipsoid, noise_vertices,
                          input_rows: Sequence[np.ndarray], cost: CostModel,
                          tolerances: Optional[SolverTolerances] = None) -> SynthesisResult:
    """Minimize the cost bound J subject to the three LMI families."""
    problem, layout = build_transition_problem(mode, Bs, Bf, noise_vertices, input_rows, cost)
    solution = solve(problem, tolerances)

    if solution.status is SdpStatus.INFEASIBLE:
        return SynthesisResult(SdpStatus.INFEASIBLE, None, solution.margin)
    if solution.status is SdpStatus.NUMERICAL_FAILURE:
        raise NumericalFailure(
            f"transition SDP failed: {solution.message}",
            {"iterations": solution.iterations, "margin": solution.margin},
        )

    values = layout.unpack(solution.y)
    boundary = [f"beta[{i}]" for i, b in enumerate(values["beta"]) if b <= BOUNDARY_MULTIPLIER_TOL]
    boundary += [f"tau[{i}]" for i, t in enumerate(values["tau"]) if t <= BOUNDARY_MULTIPLIER_TOL]
    if values["gamma"] <= BOUNDARY_MULTIPLIER_TOL:
        boundary.append("gamma")
    controller = TransitionController(
        K=values["K"].copy(),
        l=values["l"].copy(),
        center=Bs.c.copy(),
        cost_bound=max(0.0, values["cost_bound"]),
        beta=values["beta"].copy(),
        tau=values["tau"].copy(),
        gamma=values["gamma"],
        diagnostics=SynthesisDiagnostics(
            status=solution.status.value,
            iterations=solution.iterations,
            margin=solution.margin,
            min_eig_slack=solution.min_eig_slack,
            duality_gap=solution.duality_gap,
            solve_time=solution.solve_time,
            boundary_multipliers=tuple(boundary),
        ),
    )
    return SynthesisResult(SdpStatus.OPTIMAL, controller, solution.margin)


@dataclass(frozen=True)
class AuditViolation:
    kind: str
    point: Tuple[float, ...]
    value: float
    limit: float


@dataclass(frozen=True)
class AuditReport:
    passed: bool
    samples: int
    worst_successor: float
    worst_input: float
    worst_cost: float
    cost_bound: float
    violations: Tuple[AuditViolation, ...] = ()

    @property
    def successor_slack(self) -> float:
        return 1.0 - self.worst_successor

    @property
    def input_slack(self) -> float:
        return 1.0 - self.worst_input

    @property
    def cost_slack(self) -> float:
        return self.cost_bound - self.worst_cost

    def raise_for_failure(self) -> None:
        if not self.passed:
            first = self.violations[0]
            raise AuditFailure(
                f"transition audit failed: {first.kind} value {first.value:.9g} exceeds {first.limit:.9g}",
                {"witness": list(first.point), "violations": len(self.violations)},
            )


def sample_ellipsoid(cell: Ellipsoid, boundary: int, interior: int, rng: np.random.Generator) -> np.ndarray:
    """Principal-axis extremes, `boundary` random boundary points and `interior` uniform interior points."""
    n = cell.dim
    T = cell.inverse_sqrt()
    directions = rng.standard_normal((boundary + interior, n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = np.ones(boundary + interior)
    radii[boundary:] = rng.uniform(size=interior) ** (1.0 / n)
    axes = np.vstack([np.eye(n), -np.eye(n)])
    unit = np.vstack([axes, directions * radii[:, None]])
    return cell.c + unit @ T.T


def audit_transition(ctrl: TransitionController, mode: AffineMode, Bs: Ellipsoid, Bf: Ellipsoid,
                     noise_vertices, input_rows: Sequence[np.ndarray], cost: CostModel,
                     sample_count: Optional[int] = None, interior_count: Optional[int] = None,
                     seed: Optional[int] = None, tol: Optional[float] = None) -> AuditReport:
    """Check the certificate by sampling Bs: containment, input set and cost bound."""
    sample_count = settings.AUDIT_BOUNDARY_SAMPLES if sample_count is None else sample_count
    interior_count = settings.AUDIT_INTERIOR_SAMPLES if interior_count is None else interior_count
    tol = settings.AUDIT_TOL if tol is None else tol
    rng = np.random.default_rng(settings.AUDIT_SEED if seed is None else seed)
    noise_vertices = np.atleast_2d(np.asarray(noise_vertices, dtype=float))

    xs = sample_ellipsoid(Bs, sample_count, interior_count, rng)
    us = ctrl.controls(xs)
    nominal = xs @ mode.A.T + us @ mode.B.T + mode.g
    successors = nominal[:, None, :] + noise_vertices[None, :, :]
    membership = Bf.values(successors).max(axis=1)
    if input_rows:
        input_values = np.max(
            np.stack([np.linalg.norm(np.atleast_2d(U) @ us.T, axis=0) for U in input_rows]), axis=0
        )
    else:
        input_values = np.zeros(xs.shape[0])
    costs = stage_costs(cost, xs, us)

    violations = []
    for kind, values, limit in (
        ("successor", membership, 1.0 + tol),
        ("input", input_values, 1.0 + tol),
        ("cost", costs, ctrl.cost_bound + tol),
    ):
        worst = int(np.argmax(values))
        if values[worst] > limit:
            violations.append(AuditViolation(kind, tuple(xs[worst].tolist()), float(values[worst]), limit))

    report = AuditReport(
        passed=not violations,
        samples=xs.shape[0],
        worst_successor=float(membership.max()),
        worst_input=float(input_values.max()),
        worst_cost=float(costs.max()),
        cost_bound=ctrl.cost_bound,
        violations=tuple(violations),
    )
    if violations:
        logger.warning("transition_audit_failed", violations=[v.kind for v in violations],
                       witness=list(violations[0].point))
    return report


def closed_loop_spectral_radius(mode: AffineMode, K) -> float:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (mode.n_u, mode.n_x):
        raise DimensionError(f"K must be {mode.n_u}x{mode.n_x}, got {K.shape[0]}x{K.shape[1]}")
    return float(np.max(np.abs(np.linalg.eigvals(mode.A + mode.B @ K))))


def controller_to_record(ctrl: TransitionController) -> ControllerRecord:
    diag = ctrl.diagnostics
    return ControllerRecord(
        K=ctrl.K.tolist(),
        l=ctrl.l.tolist(),
        center=ctrl.center.tolist(),
        cost_bound=ctrl.cost_bound,
        beta=ctrl.beta.tolist(),
        tau=ctrl.tau.tolist(),
        gamma=ctrl.gamma,
        diagnostics=DiagnosticsRecord(
            status=diag.status,
            iterations=diag.iterations,
            margin=diag.margin,
            min_eig_slack=diag.min_eig_slack,
            duality_gap=diag.duality_gap,
            solve_time=diag.solve_time,
            boundary_multipliers=list(diag.boundary_multipliers),
        ),
    )


def controller_from_record(record: ControllerRecord) -> TransitionController:
    diag = record.diagnostics
    return TransitionController(
        K=np.array(record.K, dtype=float).reshape(len(record.l), len(record.center)),
        l=np.array(record.l, dtype=float),
        center=np.array(record.center, dtype=float),
        cost_bound=record.cost_bound,
        beta=np.array(record.beta, dtype=float),
        tau=np.array(record.tau, dtype=float),
        gamma=record.gamma,
        diagnostics=SynthesisDiagnostics(
            status=diag.status,
            iterations=diag.iterations,
            margin=diag.margin,
            min_eig_slack=diag.min_eig_slack,
            duality_gap=diag.duality_gap,
            solve_time=diag.solve_time,
            boundary_multipliers=tuple(diag.boundary_multipliers),
        ),
    )


def audit_to_record(report: AuditReport) -> AuditRecord:
    return AuditRecord(
        passed=report.passed,
        samples=report.samples,
        worst_successor=report.worst_successor,
        worst_input=report.worst_input,
        worst_cost=report.worst_cost,
        cost_bound=report.cost_bound,
        witness=list(report.violations[0].point) if report.violations else None,
    )
