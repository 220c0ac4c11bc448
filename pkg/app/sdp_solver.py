"""Dense linear SDPs in LMI form: minimize c'y s.t. F0 + sum_j y_j F_j >= 0 per block.

The solver is a primal-dual path-following interior-point method with the HKM
search direction and a Mehrotra predictor-corrector step, started from an
infeasible point. Its conic dual is

    maximize -<F0, X>  s.t.  <F_j, X> = c_j,  X >= 0,

so the duality gap of a feasible pair is <X, F(y)>. Iterates are kept compact by
an auxiliary Euclidean bound ||y|| <= R on the decision vector.
"""
import json
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import structlog

from app.config import settings
from app.errors import ContractError, DimensionError, NumericalFailure, SchemaError

logger = structlog.get_logger()

SYMMETRY_TOL = 1e-12


class SdpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverTolerances:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-6
    max_iter: int = 200
    variable_bound: float = 1e5
    step_fraction: float = 0.95

    @classmethod
    def from_settings(cls) -> "SolverTolerances":
        return cls(
            feas_tol=settings.SDP_FEAS_TOL,
            gap_tol=settings.SDP_GAP_TOL,
            max_iter=settings.SDP_MAX_ITER,
            variable_bound=settings.SDP_VARIABLE_BOUND,
            step_fraction=settings.SDP_STEP_FRACTION,
        )


@dataclass(frozen=True, eq=False)
class SdpBlock:
    """One matrix pencil F0 + sum_j y_j F[j]; F has shape (num_vars, d, d)."""

    F0: np.ndarray
    F: np.ndarray
    name: str = ""

    def __post_init__(self):
        F0 = np.array(self.F0, dtype=float)
        F = np.array(self.F, dtype=float)
        if F0.ndim != 2 or F0.shape[0] != F0.shape[1] or F0.shape[0] < 1:
            raise DimensionError(f"block {self.name!r}: F0 must be a non-empty square matrix")
        d = F0.shape[0]
        if F.size == 0:
            F = F.reshape(0, d, d)
        if F.ndim != 3 or F.shape[1:] != (d, d):
            raise DimensionError(f"block {self.name!r}: F must have shape (m, {d}, {d}), got {F.shape}")
        if np.max(np.abs(F0 - F0.T), initial=0.0) > SYMMETRY_TOL or (
            F.shape[0] and np.max(np.abs(F - F.transpose(0, 2, 1))) > SYMMETRY_TOL
        ):
            raise ContractError(f"block {self.name!r} is not symmetric")
        object.__setattr__(self, "F0", F0)
        object.__setattr__(self, "F", F)

    @property
    def dim(self) -> int:
        return self.F0.shape[0]

    def evaluate(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[0] == 0:
            return self.F0.copy()
        return self.F0 + np.tensordot(y, self.F, axes=1)

    def scaled(self, factor: float) -> "SdpBlock":
        return SdpBlock(factor * self.F0, factor * self.F, self.name)


@dataclass(frozen=True, eq=False)
class LinearSdp:
    objective: np.ndarray
    blocks: Tuple[SdpBlock, ...]

    def __post_init__(self):
        c = np.array(self.objective, dtype=float).reshape(-1)
        blocks = tuple(self.blocks)
        for block in blocks:
            if block.F.shape[0] != c.shape[0]:
                raise DimensionError(
                    f"block {block.name!r} has {block.F.shape[0]} coefficient matrices, expected {c.shape[0]}"
                )
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "blocks", blocks)

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]

    @property
    def total_dim(self) -> int:
        return sum(block.dim for block in self.blocks)

    def with_blocks(self, extra: Sequence[SdpBlock]) -> "LinearSdp":
        return LinearSdp(self.objective, self.blocks + tuple(extra))

    def with_objective(self, objective) -> "LinearSdp":
        return LinearSdp(objective, self.blocks)

    def evaluate(self, y) -> List[np.ndarray]:
        return [block.evaluate(y) for block in self.blocks]


@dataclass(frozen=True, eq=False)
class SdpSolution:
    status: SdpStatus
    y: np.ndarray
    objective_value: float
    min_eig_slack: float
    duality_gap: float
    iterations: int = 0
    margin: Optional[float] = None
    solve_time: float = 0.0
    message: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status is SdpStatus.OPTIMAL


def min_eigenvalue(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {M.shape}")
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL:
        raise ContractError("matrix is not symmetric")
    return float(scipy.linalg.eigvalsh(M, subset_by_index=[0, 0], check_finite=False)[0])


def _cholesky(M: np.ndarray, what: str) -> np.ndarray:
    try:
        return scipy.linalg.cholesky(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"{what} lost positive definiteness") from exc


def _inverse_from_cholesky(L: np.ndarray) -> np.ndarray:
    Linv = scipy.linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True, check_finite=False)
    return Linv.T @ Linv


def _max_step(X: Sequence[np.ndarray], dX: Sequence[np.ndarray]) -> float:
    """Largest alpha with X + alpha dX positive semidefinite in every block."""
    alpha = np.inf
    for Xb, dXb in zip(X, dX):
        L = _cholesky(Xb, "primal-dual iterate")
        half = scipy.linalg.solve_triangular(L, dXb, lower=True, check_finite=False)
        W = scipy.linalg.solve_triangular(L, half.T, lower=True, check_finite=False)
        lam = scipy.linalg.eigvalsh(0.5 * (W + W.T), subset_by_index=[0, 0], check_finite=False)[0]
        if lam < 0.0:
            alpha = min(alpha, -1.0 / lam)
    return alpha


@dataclass
class _IpmOutcome:
    y: np.ndarray
    converged: bool
    iterations: int
    primal_objective: float
    dual_objective: float
    message: str = ""


class InteriorPointSolver:
    """Single-use solver for one LinearSdp; not shared between threads."""

    def __init__(self, c: np.ndarray, F0s: List[np.ndarray], Fs: List[np.ndarray], tolerances: SolverTolerances):
        self.c = c
        self.F0s = F0s
        self.Fs = Fs
        self.tol = tolerances
        self._used = False

    def _initial_point(self) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        X, S = [], []
        for F0, F in zip(self.F0s, self.Fs):
            d = F0.shape[0]
            norms = np.linalg.norm(F.reshape(F.shape[0], -1), axis=1) if F.shape[0] else np.zeros(0)
            ratio = np.max((1.0 + np.abs(self.c)) / (1.0 + norms), initial=1.0)
            xi = max(10.0, np.sqrt(d), d * ratio)
            eta = max(10.0, np.sqrt(d), 1.0 + max(np.linalg.norm(F0), np.max(norms, initial=0.0)))
            X.append(xi * np.eye(d))
            S.append(eta * np.eye(d))
        return X, S

    def _direction(self, X, Sinv, Rp, Rd, Rc, chol_M):
        rhs = -Rp.copy()
        for F, Xb, Sib, Rdb, Rcb in zip(self.Fs, X, Sinv, Rd, Rc):
            rhs += np.einsum("jkl,kl->j", F, (Rcb - Xb @ Rdb) @ Sib)
        dy = scipy.linalg.cho_solve((chol_M, True), rhs, check_finite=False)
        dS = [Rdb + np.tensordot(dy, F, axes=1) for F, Rdb in zip(self.Fs, Rd)]
        dX = []
        for Xb, Sib, dSb, Rcb in zip(X, Sinv, dS, Rc):
            Z = (Rcb - Xb @ dSb) @ Sib
            dX.append(0.5 * (Z + Z.T))
        return dX, dy, dS

    def run(self) -> _IpmOutcome:
        if self._used:
            raise ContractError("InteriorPointSolver instances are single-use")
        self._used = True

        c, tol = self.c, self.tol
        m = c.shape[0]
        n_total = sum(F0.shape[0] for F0 in self.F0s)
        X, S = self._initial_point()
        y = np.zeros(m)
        c_norm = np.linalg.norm(c)
        pobj = dobj = 0.0

        for iteration in range(tol.max_iter + 1):
            Fy = [F0 + np.tensordot(y, F, axes=1) for F0, F in zip(self.F0s, self.Fs)]
            Rd = [Fyb - Sb for Fyb, Sb in zip(Fy, S)]
            Rp = c - sum(np.einsum("jkl,kl->j", F, Xb) for F, Xb in zip(self.Fs, X))
            gap = float(sum(np.vdot(Xb, Sb) for Xb, Sb in zip(X, S)))
            mu = gap / n_total
            pobj = float(c @ y)
            dobj = -float(sum(np.vdot(F0, Xb) for F0, Xb in zip(self.F0s, X)))

            scale = max(1.0, abs(pobj))
            pinf = np.linalg.norm(Rp) / (1.0 + c_norm)
            dinf = max(np.linalg.norm(Rdb) for Rdb in Rd)
            if (
                pinf <= tol.feas_tol
                and dinf <= 0.1 * tol.feas_tol
                and gap <= tol.gap_tol * scale
                and abs(pobj - dobj) <= tol.gap_tol * scale
            ):
                return _IpmOutcome(y, True, iteration, pobj, dobj)
            if iteration == tol.max_iter:
                break

            Sinv = [_inverse_from_cholesky(_cholesky(Sb, "dual slack")) for Sb in S]
            M = np.zeros((m, m))
            for F, Xb, Sib in zip(self.Fs, X, Sinv):
                G = np.matmul(np.matmul(Xb, F), Sib)
                M += np.einsum("ikl,jlk->ij", F, G)
            M = 0.5 * (M + M.T)
            chol_M = _cholesky(M, "Schur complement")

            # predictor
            Rc = [-(Xb @ Sb) for Xb, Sb in zip(X, S)]
            dX_a, dy_a, dS_a = self._direction(X, Sinv, Rp, Rd, Rc, chol_M)
            ap = min(1.0, _max_step(X, dX_a))
            ad = min(1.0, _max_step(S, dS_a))
            mu_aff = sum(
                np.vdot(Xb + ap * dXb, Sb + ad * dSb) for Xb, dXb, Sb, dSb in zip(X, dX_a, S, dS_a)
            ) / n_total
            sigma = float(np.clip((mu_aff / mu) ** 3, 0.0, 1.0)) if mu > 0 else 0.0

            # corrector
            Rc = [
                sigma * mu * np.eye(Xb.shape[0]) - Xb @ Sb - dXb @ dSb
                for Xb, Sb, dXb, dSb in zip(X, S, dX_a, dS_a)
            ]
            dX, dy, dS = self._direction(X, Sinv, Rp, Rd, Rc, chol_M)
            ap = min(1.0, tol.step_fraction * _max_step(X, dX))
            ad = min(1.0, tol.step_fraction * _max_step(S, dS))
            if ap < 1e-12 and ad < 1e-12:
                return _IpmOutcome(y, False, iteration, pobj, dobj, "step length collapsed")

            X = [Xb + ap * dXb for Xb, dXb in zip(X, dX)]
            S = [Sb + ad * dSb for Sb, dSb in zip(S, dS)]
            y = y + ad * dy

        return _IpmOutcome(y, False, tol.max_iter, pobj, dobj, "iteration cap reached")


def _active_variables(problem: LinearSdp) -> np.ndarray:
    used = np.zeros(problem.num_vars, dtype=bool)
    for block in problem.blocks:
        if block.F.shape[0]:
            used |= np.any(block.F.reshape(block.F.shape[0], -1) != 0.0, axis=1)
    return used


def _norm_bound_block(k: int, bound: float) -> Tuple[np.ndarray, np.ndarray]:
    """[[1, y'/R], [y/R, I]] >= 0, i.e. ||y|| <= R."""
    F0 = np.eye(k + 1)
    F = np.zeros((k, k + 1, k + 1))
    for j in range(k):
        F[j, 0, j + 1] = F[j, j + 1, 0] = 1.0 / bound
    return F0, F


def _run_reduced(problem: LinearSdp, c: np.ndarray, active: np.ndarray, tol: SolverTolerances,
                 extra_column: Optional[List[np.ndarray]] = None) -> _IpmOutcome:
    """Solve over the active variables (plus an optional extra column per block)."""
    F0s = [block.F0 for block in problem.blocks]
    Fs = [block.F[active] for block in problem.blocks]
    if extra_column is not None:
        Fs = [np.concatenate([F, col[None]], axis=0) for F, col in zip(Fs, extra_column)]
    k = int(np.count_nonzero(active))
    if k:
        B0, BF = _norm_bound_block(k, tol.variable_bound)
        if extra_column is not None:
            BF = np.concatenate([BF, np.zeros((1,) + B0.shape)], axis=0)
        F0s.append(B0)
        Fs.append(BF)
    return InteriorPointSolver(c, F0s, Fs, tol).run()


def _phase_one(problem: LinearSdp, tol: SolverTolerances) -> Tuple[float, np.ndarray, int]:
    if problem.num_vars == 0 or not np.any(_active_variables(problem)):
        y = np.zeros(problem.num_vars)
        return min(min_eigenvalue(block.F0) for block in problem.blocks), y, 0
    active = _active_variables(problem)
    k = int(np.count_nonzero(active))
    c = np.zeros(k + 1)
    c[-1] = -1.0
    minus_identity = [-np.eye(block.dim) for block in problem.blocks]
    outcome = _run_reduced(problem, c, active, tol, extra_column=minus_identity)
    if not outcome.converged:
        raise NumericalFailure(f"phase-1 solve failed: {outcome.message}", {"iterations": outcome.iterations})
    y = np.zeros(problem.num_vars)
    y[active] = outcome.y[:k]
    margin = min(min_eigenvalue(F) for F in problem.evaluate(y))
    return margin, y, outcome.iterations


def feasibility_margin(problem: LinearSdp, tolerances: Optional[SolverTolerances] = None) -> float:
    """max t such that F(y) >= t I in every block for some y."""
    tol = tolerances or SolverTolerances.from_settings()
    margin, _, _ = _phase_one(problem, tol)
    return margin


def solve(problem: LinearSdp, tolerances: Optional[SolverTolerances] = None) -> SdpSolution:
    tol = tolerances or SolverTolerances.from_settings()
    started = time.perf_counter()
    m = problem.num_vars

    def finish(status, y, iterations, margin, gap=np.nan, message=""):
        slack = min(min_eigenvalue(F) for F in problem.evaluate(y)) if problem.blocks else np.inf
        return SdpSolution(
            status=status,
            y=y,
            objective_value=float(problem.objective @ y),
            min_eig_slack=slack,
            duality_gap=float(gap),
            iterations=iterations,
            margin=margin,
            solve_time=time.perf_counter() - started,
            message=message,
        )

    try:
        margin, y_feasible, phase_one_iters = _phase_one(problem, tol)
    except NumericalFailure as exc:
        return finish(SdpStatus.NUMERICAL_FAILURE, np.zeros(m), 0, None, message=exc.message)

    if margin < -tol.feas_tol:
        return finish(SdpStatus.INFEASIBLE, y_feasible, phase_one_iters, margin, message="negative phase-1 margin")

    active = _active_variables(problem)
    if np.any(problem.objective[~active] != 0.0):
        return finish(SdpStatus.NUMERICAL_FAILURE, y_feasible, phase_one_iters, margin,
                      message="objective depends on a variable absent from every block (unbounded)")
    if not np.any(active):
        return finish(SdpStatus.OPTIMAL, np.zeros(m), phase_one_iters, margin, gap=0.0)

    try:
        outcome = _run_reduced(problem, problem.objective[active], active, tol)
    except NumericalFailure as exc:
        return finish(SdpStatus.NUMERICAL_FAILURE, y_feasible, phase_one_iters, margin, message=exc.message)

    y = np.zeros(m)
    y[active] = outcome.y
    iterations = phase_one_iters + outcome.iterations
    gap = abs(outcome.primal_objective - outcome.dual_objective)
    if not outcome.converged:
        logger.debug("sdp_not_converged", message=outcome.message, iterations=iterations)
        return finish(SdpStatus.NUMERICAL_FAILURE, y, iterations, margin, gap, outcome.message)

    solution = finish(SdpStatus.OPTIMAL, y, iterations, margin, gap)
    if solution.min_eig_slack < -tol.feas_tol:
        return finish(SdpStatus.NUMERICAL_FAILURE, y, iterations, margin, gap,
                      "returned point violates a block beyond the feasibility tolerance")
    if np.linalg.norm(y) > 0.99 * tol.variable_bound:
        return finish(SdpStatus.NUMERICAL_FAILURE, y, iterations, margin, gap,
                      "decision-vector bound is active; the problem is likely unbounded")
    return solution


def problem_to_dict(problem: LinearSdp) -> dict:
    return {
        "num_vars": problem.num_vars,
        "objective": problem.objective.tolist(),
        "blocks": [
            {"name": block.name, "F0": block.F0.tolist(), "F": block.F.tolist()}
            for block in problem.blocks
        ],
    }


def problem_from_dict(data: dict) -> LinearSdp:
    try:
        m = int(data["num_vars"])
        blocks = []
        for raw in data["blocks"]:
            F0 = np.array(raw["F0"], dtype=float)
            F = np.array(raw["F"], dtype=float).reshape(m, F0.shape[0], F0.shape[0])
            blocks.append(SdpBlock(F0, F, raw.get("name", "")))
        return LinearSdp(np.array(data["objective"], dtype=float), tuple(blocks))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed SDP dump: {exc}") from exc


def dump_problem(problem: LinearSdp, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(problem_to_dict(problem)))
    return path


def load_problem(path) -> LinearSdp:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"corrupt SDP dump {path}: {exc}") from exc
    return problem_from_dict(data)
