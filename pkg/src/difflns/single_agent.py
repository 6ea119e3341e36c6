"""Single-agent planners: BFS distance fields, shortest suffixes and SIPPS.

SIPPS here plans against *soft* occupancy from other agents' paths. It
returns a path that lexicographically minimises (number of soft collisions,
arrival time). A soft collision is counted

* once per other agent sharing a cell with us at a timestep up to arrival,
* once per other agent swapping cells with us between two timesteps,
* once per other agent that occupies our goal at any time after we arrive
  (we rest there forever, so each such agent is charged once).

Other agents rest at the final cell of their path forever.
"""

from __future__ import annotations

import heapq
import math
import time
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grid import Cell, GridMap

INF = math.inf


class UnreachableError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Shortest-path step counts to ``goal``; ``inf`` where unreachable."""

    goal: Cell
    dist: np.ndarray

    def __getitem__(self, cell: Cell) -> float:
        return float(self.dist[cell[0], cell[1]])

    def reachable(self, cell: Cell) -> bool:
        return math.isfinite(self.dist[cell[0], cell[1]])


def bfs_distance_map(grid: GridMap, goal: Cell) -> DistanceField:
    if not grid.is_free(goal):
        raise ValueError(f"goal {goal} is not a free cell")
    dist = np.full(grid.shape, np.inf)
    dist[goal] = 0.0
    queue = deque([goal])
    while queue:
        cell = queue.popleft()
        d = dist[cell] + 1
        for nxt in grid.neighbors(cell):
            if dist[nxt] == np.inf:
                dist[nxt] = d
                queue.append(nxt)
    dist.setflags(write=False)
    return DistanceField(goal, dist)


def shortest_suffix(grid: GridMap, start: Cell, goal: Cell,
                    field: DistanceField | None = None) -> list[Cell]:
    """Cells after ``start`` along a shortest static path to ``goal``."""
    if field is None:
        field = bfs_distance_map(grid, goal)
    if not field.reachable(start):
        raise UnreachableError(f"{goal} is unreachable from {start}")
    suffix = []
    cell = start
    while cell != goal:
        # neighbor order is fixed, so ties resolve deterministically
        cell = min(grid.neighbors(cell), key=lambda c: field[c])
        suffix.append(cell)
    return suffix


class SafeIntervalTable:
    """Soft occupancy of grid cells by a set of other agents' paths.

    Paths can be added (and removed) by the single owner of the table; the
    planner only reads it.
    """

    def __init__(self, grid: GridMap, paths: Mapping[int, Sequence[Cell]] | None = None):
        self.grid = grid
        self._visits: dict[Cell, dict[int, list[int]]] = {}
        self._parked: dict[Cell, dict[int, int]] = {}
        self._moves: dict[tuple[Cell, Cell, int], list[int]] = {}
        self._paths: dict[int, tuple[Cell, ...]] = {}
        for agent, path in (paths or {}).items():
            self.add_path(agent, path)

    @property
    def agents(self) -> list[int]:
        return list(self._paths)

    @property
    def horizon(self) -> int:
        """Time from which all occupancy is static."""
        return max((len(p) - 1 for p in self._paths.values()), default=0)

    def add_path(self, agent: int, path: Sequence[Cell]) -> None:
        if agent in self._paths:
            raise ValueError(f"agent {agent} already has a path in the table")
        path = tuple(path)
        self._paths[agent] = path
        last = len(path) - 1
        for t, cell in enumerate(path[:-1]):
            self._visits.setdefault(cell, {}).setdefault(t, []).append(agent)
            if path[t + 1] != cell:
                self._moves.setdefault((cell, path[t + 1], t), []).append(agent)
        self._parked.setdefault(path[-1], {})[agent] = last

    def remove_path(self, agent: int) -> None:
        path = self._paths.pop(agent)
        for t, cell in enumerate(path[:-1]):
            bucket = self._visits[cell][t]
            bucket.remove(agent)
            if not bucket:
                del self._visits[cell][t]
            if path[t + 1] != cell:
                key = (cell, path[t + 1], t)
                self._moves[key].remove(agent)
                if not self._moves[key]:
                    del self._moves[key]
        del self._parked[path[-1]][agent]

    def occupancy(self, cell: Cell, t: int) -> int:
        """Number of other agents at ``cell`` at time ``t``."""
        n = 0
        visits = self._visits.get(cell)
        if visits:
            n += len(visits.get(t, ()))
        parked = self._parked.get(cell)
        if parked:
            n += sum(1 for since in parked.values() if since <= t)
        return n

    def swaps(self, src: Cell, dst: Cell, t: int) -> int:
        """Agents moving ``dst -> src`` while we move ``src -> dst`` at ``t``."""
        return len(self._moves.get((dst, src, t), ()))

    def later_visitors(self, cell: Cell, t: int) -> int:
        """Number of agents that occupy ``cell`` at some time strictly after ``t``."""
        seen = set(a for a in self._parked.get(cell, {}))
        for tv, agents in self._visits.get(cell, {}).items():
            if tv > t:
                seen.update(agents)
        return len(seen)

    def intervals(self, cell: Cell) -> list[tuple[int, float, int]]:
        """Partition of ``[0, inf)`` into ``(start, end, occupancy)`` pieces.

        Obstacles yield one interval with occupancy ``-1`` (hard); occupancy
        ``0`` marks a safe interval, positive values a soft-occupied one.
        """
        if not self.grid.is_free(cell):
            return [(0, INF, -1)]
        times = set(self._visits.get(cell, {}))
        times.update(t + 1 for t in self._visits.get(cell, {}))
        times.update(self._parked.get(cell, {}).values())
        times.add(0)
        bounds = sorted(times)
        out: list[tuple[int, float, int]] = []
        for k, start in enumerate(bounds):
            end = bounds[k + 1] if k + 1 < len(bounds) else INF
            occ = self.occupancy(cell, start)
            if out and out[-1][2] == occ:
                out[-1] = (out[-1][0], end, occ)
            else:
                out.append((start, end, occ))
        return out


def count_soft_collisions(path: Sequence[Cell], table: SafeIntervalTable) -> int:
    """Soft-collision count of ``path`` against ``table`` (module docstring rules)."""
    n = 0
    for t, cell in enumerate(path):
        n += table.occupancy(cell, t)
        if t + 1 < len(path) and path[t + 1] != cell:
            n += table.swaps(cell, path[t + 1], t)
    return n + table.later_visitors(path[-1], len(path) - 1)


@dataclass(frozen=True)
class PathResult:
    path: tuple[Cell, ...] | None
    soft_collisions: int = 0

    @property
    def found(self) -> bool:
        return self.path is not None


_TERMINAL = (-1, -1)


def sipps(grid: GridMap, start: Cell, goal: Cell, others: SafeIntervalTable,
          deadline: float | None = None, field: DistanceField | None = None) -> PathResult:
    """Plan ``start -> goal`` minimising (soft collisions, arrival time).

    ``deadline`` is an absolute ``time.perf_counter()`` value; if it passes,
    the search gives up and returns a no-path result.
    """
    if field is None or field.goal != goal:
        field = bfs_distance_map(grid, goal)
    if not grid.is_free(start) or not field.reachable(start):
        return PathResult(None)
    dist = field.dist
    horizon = others.horizon
    neighbors_cache: dict[Cell, list[Cell]] = {}

    def successors(cell):
        nbrs = neighbors_cache.get(cell)
        if nbrs is None:
            nbrs = [cell] + grid.neighbors(cell)
            neighbors_cache[cell] = nbrs
        return nbrs

    # heap entries: (collisions, t + h, -t, tiebreak, cell, t)
    counter = 0
    start_cost = others.occupancy(start, 0)
    heap = [(start_cost, dist[start], 0, counter, start, 0)]
    closed: dict[tuple[Cell, int], tuple[Cell, int] | None] = {}
    parent: dict[tuple[Cell, int], tuple[Cell, int] | None] = {(start, 0): None}
    best_seen: dict[tuple[Cell, int], tuple[int, int]] = {(start, 0): (start_cost, 0)}
    goal_parent: dict[int, tuple[Cell, int]] = {}
    pops = 0
    while heap:
        col, _, neg_t, _, cell, t = heapq.heappop(heap)
        t = -neg_t
        if cell == _TERMINAL:
            node = goal_parent[t]
            return PathResult(_reconstruct(parent, node), col)
        pops += 1
        if deadline is not None and pops % 512 == 0 and time.perf_counter() > deadline:
            return PathResult(None)
        key = (cell, min(t, horizon))
        if key in closed:
            continue
        closed[key] = None
        if cell == goal:
            total = col + others.later_visitors(goal, t)
            if t not in goal_parent:
                goal_parent[t] = key
                counter += 1
                # terminal entries win ties against ordinary states
                heapq.heappush(heap, (total, t, -t, -counter, _TERMINAL, t))
        nt = t + 1
        for nxt in successors(cell):
            nkey = (nxt, min(nt, horizon))
            if nkey in closed:
                continue
            ncol = col + others.occupancy(nxt, nt)
            if nxt != cell:
                ncol += others.swaps(cell, nxt, t)
            prev = best_seen.get(nkey)
            if prev is not None and prev <= (ncol, nt):
                continue
            best_seen[nkey] = (ncol, nt)
            parent[nkey] = key
            counter += 1
            heapq.heappush(heap, (ncol, nt + dist[nxt], -nt, counter, nxt, nt))
    return PathResult(None)


def _reconstruct(parent, node) -> tuple[Cell, ...]:
    # Parents are closed before their children are pushed, so the chain is
    # acyclic even through keys capped at the table horizon.
    cells = []
    key = node
    while key is not None:
        cells.append(key[0])
        key = parent[key]
    cells.reverse()
    return tuple(cells)


def plan_static(grid: GridMap, start: Cell, goal: Cell) -> list[Cell]:
    """Shortest static path including ``start``."""
    return [start] + shortest_suffix(grid, start, goal)


def paths_table(grid: GridMap, paths: Iterable[tuple[int, Sequence[Cell]]]) -> SafeIntervalTable:
    return SafeIntervalTable(grid, dict(paths))
