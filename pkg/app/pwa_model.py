"""Non-deterministic piecewise-affine systems.

x+ = A_i x + B_i u + g_i + w, with w in the noise box of mode i and i chosen by
an axis-aligned partition of the state domain. Mode indices are 0-based.
"""
import itertools
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import settings
from app.errors import (
    ContractError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    VertexLimitError,
)


def _frozen(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box {x : lower <= x <= upper}."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = _frozen(self.lower, 1, "box lower bound")
        upper = _frozen(self.upper, 1, "box upper bound")
        if lower.shape != upper.shape:
            raise DimensionError("box bounds have different lengths")
        if np.any(lower > upper):
            raise ContractError("box lower bound exceeds upper bound", {"lower": lower.tolist(), "upper": upper.tolist()})
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def symmetric(cls, half_widths: Sequence[float]) -> "Box":
        h = np.asarray(half_widths, dtype=float)
        return cls(-h, h)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    @property
    def circumradius(self) -> float:
        return float(np.linalg.norm(self.half_widths))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def intersects_ball(self, center, radius: float) -> bool:
        center = np.asarray(center, dtype=float)
        closest = np.clip(center, self.lower, self.upper)
        return bool(np.linalg.norm(center - closest) <= radius)

    def contains_ball(self, center, radius: float) -> bool:
        center = np.asarray(center, dtype=float)
        return bool(np.all(center - radius >= self.lower) and np.all(center + radius <= self.upper))

    def vertices(self) -> np.ndarray:
        """Distinct vertices; a degenerate axis contributes a single coordinate."""
        axes = [sorted({lo, hi}) for lo, hi in zip(self.lower.tolist(), self.upper.tolist())]
        return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, self.dim)

    def sample(self, rng: np.random.Generator, count: Optional[int] = None) -> np.ndarray:
        size = (self.dim,) if count is None else (count, self.dim)
        return rng.uniform(self.lower, self.upper, size=size)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class AxisConstraint:
    """One half-space x[axis] <op> bound."""

    axis: int
    op: Literal["<=", "<", ">=", ">"]
    bound: float

    def holds(self, x: np.ndarray) -> bool:
        value = x[self.axis]
        if self.op == "<=":
            return bool(value <= self.bound)
        if self.op == "<":
            return bool(value < self.bound)
        if self.op == ">=":
            return bool(value >= self.bound)
        return bool(value > self.bound)


@dataclass(frozen=True)
class PartitionRegion:
    """Conjunction of axis-aligned half-spaces; empty conjunction is the whole domain."""

    constraints: Tuple[AxisConstraint, ...] = ()

    def contains(self, x: np.ndarray) -> bool:
        return all(c.holds(x) for c in self.constraints)


@dataclass(frozen=True, eq=False)
class AffineMode:
    A: np.ndarray
    B: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        A = _frozen(self.A, 2, "A")
        B = _frozen(self.B, 2, "B")
        g = _frozen(self.g, 1, "g")
        n_x = A.shape[0]
        if A.shape != (n_x, n_x):
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != n_x or g.shape[0] != n_x:
            raise DimensionError("B rows and g length must match the state dimension")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "g", g)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    def nominal(self, x, u) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.asarray(u, dtype=float) + self.g


@dataclass(frozen=True, eq=False)
class CostModel:
    """Quadratic stage cost J(x, u) = [x; u; 1]' Q [x; u; 1] with Q = L' L."""

    Q: np.ndarray
    L: np.ndarray

    @classmethod
    def from_matrix(cls, Q) -> "CostModel":
        Q = _frozen(Q, 2, "Q")
        if Q.shape[0] != Q.shape[1]:
            raise DimensionError(f"Q must be square, got {Q.shape}")
        if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-10:
            raise ContractError("Q is not symmetric")
        eigvals, eigvecs = np.linalg.eigh(0.5 * (Q + Q.T))
        if eigvals.size and eigvals[0] < -1e-10:
            raise ContractError("Q is not positive semidefinite", {"min_eigenvalue": float(eigvals[0])})
        keep = eigvals > 1e-12
        L = np.sqrt(eigvals[keep])[:, None] * eigvecs[:, keep].T
        if np.max(np.abs(L.T @ L - Q), initial=0.0) > 1e-8:
            raise ContractError("factorization of Q lost accuracy")
        L.setflags(write=False)
        return cls(Q, L)

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    @property
    def rank(self) -> int:
        return self.L.shape[0]


@dataclass(frozen=True, eq=False)
class PwaSystem:
    modes: Tuple[AffineMode, ...]
    partition: Tuple[PartitionRegion, ...]
    domain: Box
    input_box: Box
    noise_boxes: Tuple[Box, ...]

    def __post_init__(self):
        modes = tuple(self.modes)
        if not modes:
            raise ContractError("a PWA system needs at least one mode")
        if len(self.partition) != len(modes) or len(self.noise_boxes) != len(modes):
            raise DimensionError("partition, noise boxes and modes must have the same length")
        n_x, n_u = modes[0].n_x, modes[0].n_u
        for i, mode in enumerate(modes):
            if (mode.n_x, mode.n_u) != (n_x, n_u):
                raise DimensionError(f"mode {i} dimensions differ from mode 0")
        if self.domain.dim != n_x or self.input_box.dim != n_u:
            raise DimensionError("domain/input box dimensions do not match the modes")
        for i, box in enumerate(self.noise_boxes):
            if box.dim != n_x:
                raise DimensionError(f"noise box of mode {i} must have the state dimension")
            if not box.contains(np.zeros(n_x)):
                raise ContractError(f"noise box of mode {i} does not contain the origin")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "partition", tuple(self.partition))
        object.__setattr__(self, "noise_boxes", tuple(self.noise_boxes))

    @property
    def n_x(self) -> int:
        return self.modes[0].n_x

    @property
    def n_u(self) -> int:
        return self.modes[0].n_u


@dataclass(frozen=True, eq=False)
class BallRegion:
    """Euclidean ball used for goal and obstacle regions."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center, 1, "ball center"))
        if self.radius < 0.0:
            raise ContractError("ball radius must be nonnegative")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def contains(self, x, tol: float = 0.0) -> bool:
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.center) <= self.radius + tol)

    def intersects_ball(self, center, radius: float) -> bool:
        return bool(np.linalg.norm(np.asarray(center, dtype=float) - self.center) <= self.radius + radius)

    def contains_ball(self, center, radius: float) -> bool:
        return bool(np.linalg.norm(np.asarray(center, dtype=float) - self.center) + radius <= self.radius)

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "radius": self.radius}


Region = Union[Box, BallRegion]


def mode_of(system: PwaSystem, x) -> int:
    """Index of the first partition region containing x (lowest index wins on boundaries)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (system.n_x,):
        raise DimensionError(f"state must have length {system.n_x}")
    if not system.domain.contains(x):
        raise DomainError("state outside the domain", {"x": x.tolist()})
    for index, region in enumerate(system.partition):
        if region.contains(x):
            return index
    raise DomainError("partition does not cover the state", {"x": x.tolist()})


def noise_vertices(box: Box, max_dim: Optional[int] = None) -> np.ndarray:
    max_dim = settings.MAX_NOISE_DIM if max_dim is None else max_dim
    if box.dim > max_dim:
        raise VertexLimitError(
            f"noise box of dimension {box.dim} exceeds the vertex enumeration cap",
            {"dim": box.dim, "max_dim": max_dim},
        )
    return box.vertices()


def successor_vertices(system: PwaSystem, x, u, mode: Optional[int] = None) -> np.ndarray:
    """Vertices of the successor set F(x, u); rows are states.

    `mode` overrides the partition lookup (cells keep the mode of their center).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    index = mode_of(system, x) if mode is None else mode
    if u.shape != (system.n_u,):
        raise DimensionError(f"input must have length {system.n_u}")
    if not system.input_box.contains(u, tol=1e-12):
        raise DomainError("input outside the input box", {"u": u.tolist()})
    vertices = noise_vertices(system.noise_boxes[index])
    return system.modes[index].nominal(x, u)[None, :] + vertices


def stage_cost(cost: CostModel, x, u) -> float:
    z = np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(u, dtype=float)), [1.0]])
    if z.shape[0] != cost.dim:
        raise DimensionError(f"[x; u; 1] has length {z.shape[0]}, Q expects {cost.dim}")
    return max(0.0, float(z @ cost.Q @ z))


def stage_costs(cost: CostModel, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
    """Row-wise stage_cost for stacked states and inputs."""
    z = np.hstack([xs, us, np.ones((xs.shape[0], 1))])
    if z.shape[1] != cost.dim:
        raise DimensionError(f"[x; u; 1] has length {z.shape[1]}, Q expects {cost.dim}")
    return np.maximum(0.0, np.einsum("ij,jk,ik->i", z, cost.Q, z))


def input_box_to_ellipsoid_rows(input_box: Box) -> List[np.ndarray]:
    """Rows U_j = e_j' / h_j so that ||U_j u|| <= 1 for all j iff u is in the box."""
    if np.max(np.abs(input_box.center), initial=0.0) > 1e-12:
        raise ContractError("input box must be centered at the origin", {"center": input_box.center.tolist()})
    half = input_box.half_widths
    if np.any(half <= 0.0):
        raise DegenerateInputError("input box has a zero half-width", {"half_widths": half.tolist()})
    rows = []
    for j, h in enumerate(half):
        row = np.zeros((1, input_box.dim))
        row[0, j] = 1.0 / h
        rows.append(row)
    return rows


def affine_equilibrium(mode: AffineMode) -> np.ndarray:
    """Fixed point of the nominal autonomous dynamics, (I - A) x = g."""
    lhs = np.eye(mode.n_x) - mode.A
    if np.linalg.cond(lhs) > 1e12:
        raise DomainError("I - A is singular; the mode has no isolated equilibrium")
    return np.linalg.solve(lhs, mode.g)
