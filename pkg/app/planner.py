"""Lyapunov-like value function and policy on an abstraction graph."""
import csv
import heapq
import math
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple

import numpy as np
import structlog

from app.abstraction import AbstractionGraph, CellCover, Edge
from app.errors import BellmanViolationError, DomainError, PolicyError, SchemaError
from app.lmi_synthesis import TransitionController

logger = structlog.get_logger()

UNREACHABLE = "unreachable"
BELLMAN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ValueFunction:
    values: np.ndarray
    policy: Mapping[int, int]
    goal_ids: FrozenSet[int]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "policy", MappingProxyType(dict(self.policy)))
        object.__setattr__(self, "goal_ids", frozenset(self.goal_ids))

    def value(self, cell_id: int) -> float:
        return float(self.values[cell_id])

    def is_finite(self, cell_id: int) -> bool:
        return bool(np.isfinite(self.values[cell_id]))

    @property
    def finite_ids(self) -> List[int]:
        return [int(i) for i in np.nonzero(np.isfinite(self.values))[0]]


def reverse_dijkstra(graph: AbstractionGraph) -> ValueFunction:
    """Shortest certified cost-to-goal of every cell over the reversed edges.

    Cells leave the heap in (value, cell id) order. A source only takes a
    policy edge into an already settled target; equal-cost candidates go to
    the lowest target id, then the lowest edge id.
    """
    n = len(graph.cover)
    values = np.full(n, math.inf)
    best: Dict[int, Tuple[float, int, int]] = {}
    settled = np.zeros(n, dtype=bool)
    heap: List[Tuple[float, int]] = []
    for goal in sorted(graph.goal_ids):
        values[goal] = 0.0
        heapq.heappush(heap, (0.0, goal))

    while heap:
        value, cell = heapq.heappop(heap)
        if settled[cell] or value > values[cell]:
            continue
        settled[cell] = True
        for edge in graph.in_edges.get(cell, []):
            source = edge.source
            if settled[source] or source in graph.goal_ids:
                continue
            if edge.cost_bound < 0.0:
                raise PolicyError("negative cost bound on an edge", {"edge_id": edge.edge_id})
            candidate = (edge.cost_bound + value, cell, edge.edge_id)
            if source not in best or candidate < best[source]:
                best[source] = candidate
                values[source] = candidate[0]
                heapq.heappush(heap, (candidate[0], source))

    policy = {source: choice[2] for source, choice in best.items()}
    vf = ValueFunction(values, policy, graph.goal_ids)
    logger.info("values_computed", cells=n, finite=len(vf.finite_ids), goals=len(graph.goal_ids))
    return vf


@dataclass(frozen=True)
class BellmanViolation:
    cell_id: int
    edge_id: Optional[int]
    value: float
    required: float


@dataclass(frozen=True)
class BellmanReport:
    passed: bool
    checked: int
    violations: Tuple[BellmanViolation, ...] = ()

    def raise_for_failure(self) -> None:
        if not self.passed:
            first = self.violations[0]
            raise BellmanViolationError(
                f"Bellman inequality fails at cell {first.cell_id}",
                {"cell_id": first.cell_id, "edge_id": first.edge_id,
                 "value": first.value, "required": first.required,
                 "violations": len(self.violations)},
            )


def check_bellman(graph: AbstractionGraph, vf: ValueFunction, tol: float = BELLMAN_TOL) -> BellmanReport:
    """Every finite non-goal cell needs an edge with v(source) >= cost + v(target) - tol."""
    violations = []
    checked = 0
    for cell in vf.finite_ids:
        if cell in vf.goal_ids:
            if vf.value(cell) != 0.0:
                violations.append(BellmanViolation(cell, None, vf.value(cell), 0.0))
            continue
        checked += 1
        edges = graph.edges_from(cell)
        if not edges:
            violations.append(BellmanViolation(cell, None, vf.value(cell), math.inf))
            continue
        required = [(e.cost_bound + vf.value(e.target), e.edge_id) for e in edges]
        tightest, edge_id = min(required)
        if vf.value(cell) < tightest - tol:
            violations.append(BellmanViolation(cell, edge_id, vf.value(cell), tightest))

    for cell, edge_id in vf.policy.items():
        edge = graph.edge(edge_id)
        if edge.source != cell:
            violations.append(BellmanViolation(cell, edge_id, vf.value(cell), math.nan))

    report = BellmanReport(not violations, checked, tuple(violations))
    if violations:
        logger.warning("bellman_check_failed", violations=len(violations), first_cell=violations[0].cell_id)
    else:
        logger.info("bellman_check_passed", cells=checked)
    return report


def _containing_finite(vf: ValueFunction, cover: CellCover, x) -> Tuple[np.ndarray, np.ndarray]:
    cells = cover.containing(x)
    if cells.size == 0:
        raise DomainError("state lies in no cell of the cover", {"x": np.asarray(x, dtype=float).tolist()})
    values = vf.values[cells]
    finite = np.isfinite(values)
    return cells[finite], values[finite]


def concretize_value(vf: ValueFunction, cover: CellCover, x) -> float:
    """min of v over the cells containing x; inf when none of them is finite."""
    _, values = _containing_finite(vf, cover, x)
    return float(values.min()) if values.size else math.inf


@dataclass(frozen=True, eq=False)
class PolicyDecision:
    cell_id: int
    edge: Edge

    @property
    def controller(self) -> TransitionController:
        return self.edge.controller

    @property
    def target(self) -> int:
        return self.edge.target

    def control(self, x) -> np.ndarray:
        return self.edge.controller.control(x)


def policy_lookup(vf: ValueFunction, cover: CellCover, graph: AbstractionGraph, x) -> Optional[PolicyDecision]:
    """Policy edge of the lowest-valued containing cell; None once x sits in a goal cell."""
    cells, values = _containing_finite(vf, cover, x)
    if cells.size == 0:
        raise PolicyError("no finite-valued cell contains the state",
                          {"x": np.asarray(x, dtype=float).tolist()})
    order = np.lexsort((cells, values))
    cell = int(cells[order[0]])
    if cell in vf.goal_ids:
        return None
    edge_id = vf.policy.get(cell)
    if edge_id is None:
        raise PolicyError(f"cell {cell} has a finite value but no policy edge", {"cell_id": cell})
    return PolicyDecision(cell, graph.edge(edge_id))


def value_rows(vf: ValueFunction, cover: CellCover) -> Tuple[List[str], List[list]]:
    """Header and rows of the values table; infinite values become 'unreachable'."""
    header = ["cell_id"] + [f"c{i}" for i in range(cover.dim)] + ["value", "policy_edge_id"]
    rows = []
    for cell, center in enumerate(cover.centers):
        value = vf.value(cell)
        edge_id = vf.policy.get(cell)
        rows.append(
            [cell, *(repr(float(c)) for c in center),
             repr(value) if math.isfinite(value) else UNREACHABLE,
             "" if edge_id is None else edge_id]
        )
    return header, rows


def write_values_csv(vf: ValueFunction, cover: CellCover, path) -> Path:
    path = Path(path)
    header, rows = value_rows(vf, cover)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    logger.info("values_written", path=str(path), cells=len(rows))
    return path


def read_values_csv(path, graph: AbstractionGraph) -> ValueFunction:
    """Inverse of write_values_csv against the abstraction it was planned on."""
    path = Path(path)
    n = len(graph.cover)
    values = np.full(n, math.inf)
    policy = {}
    try:
        with path.open(newline="") as handle:
            reader = csv.DictReader(handle)
            seen = 0
            for row in reader:
                cell = int(row["cell_id"])
                if not 0 <= cell < n:
                    raise SchemaError(f"cell id {cell} is outside the abstraction", {"cells": n})
                raw = row["value"]
                values[cell] = math.inf if raw == UNREACHABLE else float(raw)
                if row["policy_edge_id"]:
                    policy[cell] = int(row["policy_edge_id"])
                seen += 1
    except (OSError, KeyError, ValueError) as exc:
        raise SchemaError(f"cannot read values file {path}: {exc}") from exc
    if seen != n:
        raise SchemaError("values file does not match the abstraction", {"rows": seen, "cells": n})
    return ValueFunction(values, policy, graph.goal_ids)
