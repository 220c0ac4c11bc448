"""Ball covers, reachability pruning and the state-feedback abstraction graph."""
import json
import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import ValidationError

from app.config import settings
from app.errors import AbstractionToolkitError, CapacityError, ContractError, SchemaError
from app.lmi_synthesis import (
    Ellipsoid,
    TransitionController,
    audit_transition,
    controller_from_record,
    controller_to_record,
    synthesize_transition,
)
from app.models.records import SCHEMA_VERSION, AbstractionRecord, CoverRecord, EdgeRecord
from app.pwa_model import (
    AffineMode,
    Box,
    CostModel,
    PwaSystem,
    Region,
    input_box_to_ellipsoid_rows,
    mode_of,
    noise_vertices,
)
from app.sdp_solver import SolverTolerances

logger = structlog.get_logger()


@dataclass(frozen=True, eq=False)
class CellCover:
    """Equal balls centered on an axis-aligned grid; cell ids are row-major grid indices."""

    centers: np.ndarray
    radius: float
    grid_spacing: float
    grid_shape: Tuple[int, ...]
    mode_of_cell: Tuple[int, ...]

    def __len__(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def cell(self, cell_id: int) -> Ellipsoid:
        return self.cells[cell_id]

    @cached_property
    def cells(self) -> List[Ellipsoid]:
        return [Ellipsoid.ball(center, self.radius) for center in self.centers]

    def containing(self, x, tol: float = 0.0) -> np.ndarray:
        """Ids of cells whose membership value at x is at most 1 + tol."""
        d2 = np.sum((self.centers - np.asarray(x, dtype=float)) ** 2, axis=1)
        return np.nonzero(d2 <= self.radius**2 * (1.0 + tol))[0]

    def axis_spacing(self) -> np.ndarray:
        spacing = []
        for axis, count in enumerate(self.grid_shape):
            coords = np.unique(self.centers[:, axis])
            spacing.append(float(np.max(np.diff(coords))) if count > 1 else 0.0)
        return np.array(spacing)

    def covers_grid(self) -> bool:
        """Every grid hypercube has circumradius at most the ball radius."""
        return bool(0.5 * np.linalg.norm(self.axis_spacing()) <= self.radius * (1.0 + 1e-12))


def build_cover(domain: Box, radius: float, system: Optional[PwaSystem] = None,
                cell_cap: Optional[int] = None) -> CellCover:
    """Cover `domain` with balls of `radius` on a grid of spacing at most 2r/sqrt(n)."""
    if radius <= 0.0:
        raise ContractError("cover radius must be positive")
    cell_cap = settings.COVER_CELL_CAP if cell_cap is None else cell_cap
    n = domain.dim
    spacing = 2.0 * radius / math.sqrt(n)
    lengths = domain.upper - domain.lower
    counts = [int(math.ceil(L / spacing)) + 1 if L > 0.0 else 1 for L in lengths]
    total = math.prod(counts)
    if total > cell_cap:
        raise CapacityError(
            f"cover needs {total} cells, above the cap of {cell_cap}",
            {"cells": total, "cap": cell_cap, "radius": radius},
        )
    axes = [np.linspace(lo, hi, count) for lo, hi, count in zip(domain.lower, domain.upper, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.reshape(-1) for m in mesh], axis=1)
    centers.setflags(write=False)
    modes = tuple(mode_of(system, c) for c in centers) if system is not None else (0,) * total
    logger.info("cover_built", cells=total, grid_shape=counts, radius=radius, spacing=spacing)
    return CellCover(centers, float(radius), spacing, tuple(counts), modes)


@dataclass(frozen=True, eq=False)
class ReachBall:
    center: np.ndarray
    radius: float


def reach_overapprox(cell: Ellipsoid, mode: AffineMode, input_box: Box, noise_box: Box) -> ReachBall:
    """Ball containing {A x + B u + g + w : x in cell, u in U, w in noise box}."""
    r = cell.radius
    center = mode.A @ cell.c + mode.B @ input_box.center + mode.g + noise_box.center
    radius = (
        np.linalg.norm(mode.A, 2) * r
        + np.linalg.norm(mode.B, 2) * input_box.circumradius
        + noise_box.circumradius
    )
    return ReachBall(center, float(radius))


@dataclass(frozen=True, eq=False)
class Edge:
    edge_id: int
    source: int
    target: int
    controller: TransitionController

    @property
    def cost_bound(self) -> float:
        return self.controller.cost_bound


@dataclass(frozen=True, eq=False)
class AbstractionGraph:
    cover: CellCover
    edges: Tuple[Edge, ...]
    goal_ids: FrozenSet[int]
    blocked_ids: FrozenSet[int]

    @cached_property
    def out_edges(self) -> Dict[int, List[Edge]]:
        table = defaultdict(list)
        for edge in self.edges:
            table[edge.source].append(edge)
        return dict(table)

    @cached_property
    def in_edges(self) -> Dict[int, List[Edge]]:
        table = defaultdict(list)
        for edge in self.edges:
            table[edge.target].append(edge)
        return dict(table)

    def edges_from(self, cell_id: int) -> List[Edge]:
        return self.out_edges.get(cell_id, [])

    def edge(self, edge_id: int) -> Edge:
        edge = self.edges[edge_id]
        if edge.edge_id != edge_id:
            raise ContractError("edge ids must equal their position")
        return edge


@dataclass(frozen=True, eq=False)
class _SourceJob:
    source: int
    mode: AffineMode
    cell: Ellipsoid
    candidates: Tuple[Tuple[int, Ellipsoid], ...]
    noise_vertices: np.ndarray
    input_rows: Tuple[np.ndarray, ...]
    cost: CostModel
    tolerances: SolverTolerances


@dataclass(frozen=True, eq=False)
class _SourceResult:
    source: int
    transitions: Tuple[Tuple[int, TransitionController], ...]
    infeasible: int
    failures: Tuple[Tuple[int, str], ...]


def _synthesize_from_source(job: _SourceJob) -> _SourceResult:
    transitions, failures, infeasible = [], [], 0
    for target, target_cell in job.candidates:
        try:
            result = synthesize_transition(
                job.mode, job.cell, target_cell, job.noise_vertices, job.input_rows, job.cost, job.tolerances
            )
            if not result.feasible:
                infeasible += 1
                continue
            report = audit_transition(
                result.controller, job.mode, job.cell, target_cell, job.noise_vertices, job.input_rows, job.cost
            )
            report.raise_for_failure()
        except AbstractionToolkitError as exc:
            failures.append((target, f"{exc.code}: {exc.message}"))
            continue
        transitions.append((target, result.controller))
    return _SourceResult(job.source, tuple(transitions), infeasible, tuple(failures))


def classify_cells(cover: CellCover, domain: Box, goal: Region,
                   obstacles: Sequence[Region]) -> Tuple[FrozenSet[int], FrozenSet[int], FrozenSet[int]]:
    """(goal ids, blocked ids, ids whose ball lies inside the domain)."""
    r = cover.radius
    blocked = frozenset(
        i for i, c in enumerate(cover.centers) if any(o.intersects_ball(c, r) for o in obstacles)
    )
    goal_ids = frozenset(
        i for i, c in enumerate(cover.centers) if i not in blocked and goal.contains_ball(c, r)
    )
    inside = frozenset(i for i, c in enumerate(cover.centers) if domain.contains_ball(c, r))
    return goal_ids, blocked, inside


def candidate_targets(cover: CellCover, reach: ReachBall, allowed: Iterable[int], source: int,
                      margin: Optional[float] = None) -> List[int]:
    margin = settings.PRUNE_MARGIN if margin is None else margin
    allowed = np.array(sorted(allowed), dtype=int)
    if allowed.size == 0:
        return []
    distances = np.linalg.norm(cover.centers[allowed] - reach.center, axis=1)
    keep = allowed[distances <= reach.radius + cover.radius + margin]
    return [int(t) for t in keep if t != source]


def build_abstraction(system: PwaSystem, cover: CellCover, goal: Region, obstacles: Sequence[Region],
                      cost: CostModel, workers: Optional[int] = None,
                      tolerances: Optional[SolverTolerances] = None,
                      progress: bool = False) -> AbstractionGraph:
    """Synthesize one certified controller per reachable (source, target) pair."""
    workers = settings.WORKERS if workers is None else workers
    tolerances = tolerances or SolverTolerances.from_settings()
    started = time.perf_counter()

    goal_ids, blocked, inside = classify_cells(cover, system.domain, goal, obstacles)
    targets_allowed = sorted(inside - blocked)
    input_rows = tuple(input_box_to_ellipsoid_rows(system.input_box))

    jobs = []
    for source in range(len(cover)):
        if source in blocked:
            continue
        mode_index = cover.mode_of_cell[source]
        mode = system.modes[mode_index]
        noise_box = system.noise_boxes[mode_index]
        cell = cover.cell(source)
        reach = reach_overapprox(cell, mode, system.input_box, noise_box)
        candidates = candidate_targets(cover, reach, targets_allowed, source)
        jobs.append(_SourceJob(
            source=source,
            mode=mode,
            cell=cell,
            candidates=tuple((t, cover.cell(t)) for t in candidates),
            noise_vertices=noise_vertices(noise_box),
            input_rows=input_rows,
            cost=cost,
            tolerances=tolerances,
        ))
    logger.info("abstraction_jobs_prepared", sources=len(jobs),
                candidate_pairs=sum(len(j.candidates) for j in jobs), blocked=len(blocked), goals=len(goal_ids))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(_tracked(executor.map(_synthesize_from_source, jobs, chunksize=1), len(jobs), progress))
    else:
        results = list(_tracked(map(_synthesize_from_source, jobs), len(jobs), progress))

    edges: List[Edge] = []
    infeasible = 0
    for result in results:
        infeasible += result.infeasible
        for target, message in result.failures:
            logger.warning("transition_skipped", source=result.source, target=target, reason=message)
        for target, controller in result.transitions:
            edges.append(Edge(len(edges), result.source, target, controller))

    graph = AbstractionGraph(cover, tuple(edges), goal_ids, blocked)
    logger.info(
        "abstraction_built",
        edges=len(edges),
        infeasible_pairs=infeasible,
        skipped_pairs=sum(len(r.failures) for r in results),
        seconds=round(time.perf_counter() - started, 3),
    )
    return graph


def _tracked(results, total: int, progress: bool):
    for done, result in enumerate(results, start=1):
        if progress and (done % 10 == 0 or done == total):
            logger.info("abstraction_progress", sources_done=done, sources_total=total)
        yield result


def graph_to_record(graph: AbstractionGraph) -> AbstractionRecord:
    cover = graph.cover
    return AbstractionRecord(
        schema_version=SCHEMA_VERSION,
        cover=CoverRecord(
            centers=cover.centers.tolist(),
            radius=cover.radius,
            grid_spacing=cover.grid_spacing,
            grid_shape=list(cover.grid_shape),
            mode_of_cell=list(cover.mode_of_cell),
        ),
        edges=[
            EdgeRecord(edge_id=e.edge_id, source=e.source, target=e.target,
                       controller=controller_to_record(e.controller))
            for e in graph.edges
        ],
        goal_ids=sorted(graph.goal_ids),
        blocked_ids=sorted(graph.blocked_ids),
    )


def graph_from_record(record: AbstractionRecord) -> AbstractionGraph:
    if record.schema_version != SCHEMA_VERSION:
        raise SchemaError(
            f"abstraction schema version {record.schema_version} is not supported",
            {"expected": SCHEMA_VERSION, "found": record.schema_version},
        )
    dim = len(record.cover.grid_shape)
    centers = np.array(record.cover.centers, dtype=float).reshape(-1, dim)
    centers.setflags(write=False)
    cover = CellCover(
        centers=centers,
        radius=record.cover.radius,
        grid_spacing=record.cover.grid_spacing,
        grid_shape=tuple(record.cover.grid_shape),
        mode_of_cell=tuple(record.cover.mode_of_cell),
    )
    edges = tuple(
        Edge(e.edge_id, e.source, e.target, controller_from_record(e.controller)) for e in record.edges
    )
    for position, edge in enumerate(edges):
        if edge.edge_id != position:
            raise SchemaError("edge ids must be consecutive from 0", {"position": position, "edge_id": edge.edge_id})
    return AbstractionGraph(cover, edges, frozenset(record.goal_ids), frozenset(record.blocked_ids))


def save_abstraction(graph: AbstractionGraph, path) -> int:
    """Write the graph as versioned JSON; returns the file size in bytes."""
    path = Path(path)
    payload = json.dumps(graph_to_record(graph).model_dump(mode="python"))
    path.write_text(payload)
    size = path.stat().st_size
    logger.info("abstraction_saved", path=str(path), edges=len(graph.edges), bytes=size)
    return size


def load_abstraction(path) -> AbstractionGraph:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read abstraction file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError(f"abstraction file {path} does not hold a JSON object")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(
            f"abstraction schema version {data.get('schema_version')!r} is not supported",
            {"expected": SCHEMA_VERSION},
        )
    try:
        record = AbstractionRecord.model_validate(data)
    except ValidationError as exc:
        raise SchemaError(f"corrupt abstraction file {path}", {"errors": exc.errors(include_url=False)}) from exc
    return graph_from_record(record)
