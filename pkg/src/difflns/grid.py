"""Grid MAPF semantics: maps, actions, instances, plans, conflicts and costs.

Coordinates are ``(row, col)`` and ``up`` decreases the row. Agents are
assumed to rest at the last cell of their path once the path ends.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

Cell = tuple[int, int]


class Action(enum.IntEnum):
    STAY = 0
    UP = 1
    DOWN = 2
    LEFT = 3
    RIGHT = 4

    @property
    def delta(self) -> Cell:
        return DELTAS[self]


NUM_ACTIONS = len(Action)
DELTAS: tuple[Cell, ...] = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))
# (C, 2) displacement table, handy for expected-displacement arithmetic.
DELTA_ARRAY = np.array(DELTAS, dtype=np.float64)


class PlanError(ValueError):
    """Raised when a plan is malformed or incomplete."""


@dataclass(frozen=True, eq=False)
class GridMap:
    """Occupancy grid; ``cells[r, c]`` is True for an obstacle."""

    cells: np.ndarray

    def __post_init__(self):
        cells = np.array(self.cells, dtype=bool)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ValueError(f"map must be a non-empty 2D array, got shape {cells.shape}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def empty(cls, height: int, width: int) -> GridMap:
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def free_count(self) -> int:
        return int(self.cells.size - self.cells.sum())

    @property
    def obstacle_density(self) -> float:
        return float(self.cells.mean())

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.cells[cell[0], cell[1]]

    def free_cells(self) -> list[Cell]:
        rows, cols = np.nonzero(~self.cells)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]

    def neighbors(self, cell: Cell) -> list[Cell]:
        """Free 4-neighbours of ``cell`` (stay excluded)."""
        r, c = cell
        out = []
        for dr, dc in DELTAS[1:]:
            nxt = (r + dr, c + dc)
            if self.is_free(nxt):
                out.append(nxt)
        return out

    def components(self) -> np.ndarray:
        """Label free cells by 4-connected component (-1 on obstacles)."""
        labels = np.full(self.shape, -1, dtype=np.int64)
        current = 0
        for start in self.free_cells():
            if labels[start] >= 0:
                continue
            labels[start] = current
            queue = deque([start])
            while queue:
                cell = queue.popleft()
                for nxt in self.neighbors(cell):
                    if labels[nxt] < 0:
                        labels[nxt] = current
                        queue.append(nxt)
            current += 1
        return labels

    def is_connected(self) -> bool:
        labels = self.components()
        return labels.max(initial=-1) <= 0

    def __eq__(self, other):
        return isinstance(other, GridMap) and np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return hash((self.shape, self.cells.tobytes()))

    def to_text(self) -> str:
        lines = [f"{self.height} {self.width}"]
        lines += ["".join("@" if v else "." for v in row) for row in self.cells]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> GridMap:
        lines = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty map text")
        try:
            h, w = (int(v) for v in lines[0].split())
        except ValueError as exc:
            raise ValueError(f"bad map header {lines[0]!r}") from exc
        rows = lines[1:]
        if len(rows) != h:
            raise ValueError(f"expected {h} map rows, found {len(rows)}")
        cells = np.zeros((h, w), dtype=bool)
        for r, row in enumerate(rows):
            if len(row) != w:
                raise ValueError(f"map row {r} has {len(row)} chars, expected {w}")
            for c, ch in enumerate(row):
                if ch == "@":
                    cells[r, c] = True
                elif ch != ".":
                    raise ValueError(f"unknown map character {ch!r} at ({r}, {c})")
        return cls(cells)


def apply_action(pos: Cell, action: Action | int, grid: GridMap) -> Cell | None:
    """Move ``pos`` by ``action``; ``None`` when the move leaves the map or hits an obstacle."""
    dr, dc = DELTAS[int(action)]
    nxt = (pos[0] + dr, pos[1] + dc)
    return nxt if grid.is_free(nxt) else None


def action_between(a: Cell, b: Cell) -> Action | None:
    delta = (b[0] - a[0], b[1] - a[1])
    try:
        return Action(DELTAS.index(delta))
    except ValueError:
        return None


@dataclass(frozen=True, eq=False)
class Instance:
    """A MAPF problem. Construction checks distinctness and free placement;
    reachability is checked by :meth:`validate`."""

    map: GridMap
    starts: tuple[Cell, ...]
    goals: tuple[Cell, ...]
    horizon: int = 0

    def __post_init__(self):
        starts = tuple((int(r), int(c)) for r, c in self.starts)
        goals = tuple((int(r), int(c)) for r, c in self.goals)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "goals", goals)
        if len(starts) != len(goals):
            raise ValueError(f"{len(starts)} starts but {len(goals)} goals")
        if len(set(starts)) != len(starts):
            raise ValueError("starts are not pairwise distinct")
        if len(set(goals)) != len(goals):
            raise ValueError("goals are not pairwise distinct")
        for kind, cells in (("start", starts), ("goal", goals)):
            for i, cell in enumerate(cells):
                if not self.map.is_free(cell):
                    raise ValueError(f"{kind} of agent {i} at {cell} is not a free cell")
        if self.horizon <= 0:
            object.__setattr__(self, "horizon", default_horizon(self.map))

    @property
    def num_agents(self) -> int:
        return len(self.starts)

    def validate(self) -> None:
        labels = self.map.components()
        for i, (s, g) in enumerate(zip(self.starts, self.goals)):
            if labels[s] != labels[g]:
                raise ValueError(f"goal {g} of agent {i} is unreachable from start {s}")

    def scenario_text(self) -> str:
        return "".join(f"{s[0]} {s[1]} {g[0]} {g[1]}\n" for s, g in zip(self.starts, self.goals))


def default_horizon(grid: GridMap) -> int:
    return 2 * (grid.height + grid.width)


def parse_scenario(text: str) -> tuple[list[Cell], list[Cell]]:
    starts, goals = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"scenario line {lineno}: expected 'srow scol grow gcol', got {line!r}")
        sr, sc, gr, gc = (int(p) for p in parts)
        starts.append((sr, sc))
        goals.append((gr, gc))
    return starts, goals


def load_instance(map_path: str | Path, scen_path: str | Path, horizon: int = 0) -> Instance:
    grid = GridMap.from_text(Path(map_path).read_text())
    starts, goals = parse_scenario(Path(scen_path).read_text())
    inst = Instance(grid, tuple(starts), tuple(goals), horizon)
    inst.validate()
    return inst


@dataclass(frozen=True)
class Plan:
    """Per-agent location sequences; ``paths[i][0]`` is agent ``i``'s start."""

    paths: tuple[tuple[Cell, ...], ...]

    def __post_init__(self):
        paths = tuple(tuple((int(r), int(c)) for r, c in p) for p in self.paths)
        if any(len(p) == 0 for p in paths):
            raise PlanError("empty path in plan")
        object.__setattr__(self, "paths", paths)

    @property
    def num_agents(self) -> int:
        return len(self.paths)

    @property
    def makespan(self) -> int:
        return max((len(p) for p in self.paths), default=1) - 1

    def lengths(self) -> list[int]:
        return [len(p) - 1 for p in self.paths]

    def to_text(self) -> str:
        return "".join(" ".join(f"{r},{c}" for r, c in p) + "\n" for p in self.paths)

    @classmethod
    def from_text(cls, text: str) -> Plan:
        paths = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                path = [tuple(int(v) for v in tok.split(",")) for tok in line.split()]
            except ValueError as exc:
                raise PlanError(f"plan line {lineno}: cannot parse {line!r}") from exc
            if any(len(cell) != 2 for cell in path):
                raise PlanError(f"plan line {lineno}: cells must be 'row,col'")
            paths.append(tuple(path))
        return cls(tuple(paths))


def pad_plan(plan: Plan, length: int) -> Plan:
    """Repeat each path's final cell until it has ``length`` cells."""
    return Plan(tuple(p + (p[-1],) * max(0, length - len(p)) for p in plan.paths))


@dataclass(frozen=True)
class ConflictReport:
    vertex_conflicts: tuple[tuple[int, int, int, Cell], ...] = ()
    edge_conflicts: tuple[tuple[int, int, int], ...] = ()
    pairs: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    @property
    def colliding_pairs(self) -> int:
        return len(self.pairs)

    @property
    def is_collision_free(self) -> bool:
        return not self.pairs


def _scan_conflicts(paths: Sequence[Sequence[Cell]], pairs_only: bool):
    n = len(paths)
    length = max(len(p) for p in paths) if n else 0
    vertex, edge, pairs = [], [], set()
    for t in range(length):
        occupied: dict[Cell, list[int]] = {}
        moves: dict[tuple[Cell, Cell], list[int]] = {}
        for i, p in enumerate(paths):
            here = p[t] if t < len(p) else p[-1]
            occupied.setdefault(here, []).append(i)
            if t + 1 < len(p) and p[t + 1] != here:
                moves.setdefault((here, p[t + 1]), []).append(i)
        for cell, agents in occupied.items():
            if len(agents) > 1:
                for a_idx in range(len(agents)):
                    for b_idx in range(a_idx + 1, len(agents)):
                        i, j = agents[a_idx], agents[b_idx]
                        pairs.add((i, j))
                        if not pairs_only:
                            vertex.append((i, j, t, cell))
        for (a, b), movers in moves.items():
            for j in moves.get((b, a), ()):
                for i in movers:
                    if i < j:
                        pairs.add((i, j))
                        if not pairs_only:
                            edge.append((i, j, t))
    return vertex, edge, pairs


def detect_conflicts(plan: Plan, num_agents: int | None = None) -> ConflictReport:
    """All vertex and edge conflicts of ``plan`` with goal-resting padding.

    Entries are ordered by timestep then agent index, and always have ``i < j``.
    """
    if num_agents is not None and num_agents != plan.num_agents:
        raise PlanError(f"plan has {plan.num_agents} paths, expected {num_agents}")
    vertex, edge, pairs = _scan_conflicts(plan.paths, pairs_only=False)
    vertex.sort(key=lambda v: (v[2], v[0], v[1]))
    edge.sort(key=lambda e: (e[2], e[0], e[1]))
    return ConflictReport(tuple(vertex), tuple(edge), frozenset(pairs))


def colliding_pairs(paths: Sequence[Sequence[Cell]]) -> set[tuple[int, int]]:
    """Set of ``(i, j)`` agent pairs with at least one conflict."""
    return _scan_conflicts(paths, pairs_only=True)[2]


def path_cost(path: Sequence[Cell], goal: Cell) -> int:
    """Timestep from which the agent stays at ``goal`` forever."""
    if path[-1] != goal:
        raise PlanError(f"path ends at {path[-1]}, not at goal {goal}")
    t = len(path) - 1
    while t > 0 and path[t - 1] == goal:
        t -= 1
    return t


def sum_of_costs(plan: Plan, goals: Sequence[Cell]) -> int:
    if len(goals) != plan.num_agents:
        raise PlanError(f"plan has {plan.num_agents} paths but {len(goals)} goals given")
    return sum(path_cost(p, g) for p, g in zip(plan.paths, goals))


def validate_plan(plan: Plan, instance: Instance) -> list[str]:
    """Human-readable feasibility problems (empty list means a valid solution)."""
    problems = []
    if plan.num_agents != instance.num_agents:
        return [f"plan has {plan.num_agents} paths, instance has {instance.num_agents} agents"]
    grid = instance.map
    for i, (path, s, g) in enumerate(zip(plan.paths, instance.starts, instance.goals)):
        if path[0] != s:
            problems.append(f"agent {i}: path starts at {path[0]}, expected {s}")
        if path[-1] != g:
            problems.append(f"agent {i}: path ends at {path[-1]}, expected goal {g}")
        for t, cell in enumerate(path):
            if not grid.is_free(cell):
                problems.append(f"agent {i}: cell {cell} at t={t} is outside the map or an obstacle")
                break
        for t in range(len(path) - 1):
            if action_between(path[t], path[t + 1]) is None:
                problems.append(f"agent {i}: invalid move {path[t]}->{path[t + 1]} at t={t}")
                break
    report = detect_conflicts(plan)
    for i, j, t, cell in report.vertex_conflicts:
        problems.append(f"vertex conflict: agents {i},{j} at t={t} in {cell}")
    for i, j, t in report.edge_conflicts:
        problems.append(f"edge conflict: agents {i},{j} swap between t={t} and t={t + 1}")
    return problems


def rollout(start: Cell, actions: Iterable[int], grid: GridMap) -> list[Cell]:
    """Execute actions from ``start``; invalid actions become ``stay``."""
    path = [start]
    for a in actions:
        nxt = apply_action(path[-1], a, grid)
        path.append(nxt if nxt is not None else path[-1])
    return path
