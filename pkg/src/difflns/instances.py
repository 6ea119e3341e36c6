"""Procedural benchmark maps and instances (random, maze, room, warehouse)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import DELTAS, GridMap, Instance

FAMILIES = ("random", "maze", "room", "warehouse")

# Obstacle-density ranges of the benchmark families; a None density on a
# SceneSpec samples uniformly inside the range.
DENSITY_RANGES = {
    "random": (0.175, 0.175),
    "maze": (0.274, 0.365),
    "room": (0.319, 0.350),
    "warehouse": (0.346, 0.346),
}

# Named presets for the benchmark families.
PRESETS = {
    "small-random": dict(family="random", height=10, width=10, density=0.175),
    "medium-maze": dict(family="maze", height=25, width=25),
    "medium-room": dict(family="room", height=23, width=23),
    "medium-warehouse": dict(family="warehouse", height=25, width=25, density=0.346),
    "large-maze": dict(family="maze", height=33, width=33),
}


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    family: str
    height: int
    width: int
    density: float | None = None
    agents: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown scene family {self.family!r}; expected one of {FAMILIES}")
        if self.height < 1 or self.width < 1:
            raise ValueError("map dimensions must be positive")
        if self.density is not None and not 0 <= self.density < 1:
            raise ValueError(f"obstacle density must lie in [0, 1), got {self.density}")
        if self.agents < 0:
            raise ValueError("agent count must be non-negative")


def _rng(seed: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([seed & ((1 << 64) - 1), salt])


def _target_density(spec: SceneSpec, rng: np.random.Generator) -> float:
    if spec.density is not None:
        return spec.density
    lo, hi = DENSITY_RANGES[spec.family]
    return float(rng.uniform(lo, hi))


def generate_map(spec: SceneSpec) -> GridMap:
    """Deterministic map for ``spec``; free space is always 4-connected."""
    rng = _rng(spec.seed, 0)
    target = _target_density(spec, rng)
    if spec.family == "random":
        cells = _random_cells(spec.height, spec.width, target, rng)
    elif spec.family == "maze":
        cells = _maze_cells(spec.height, spec.width, target, rng)
    elif spec.family == "room":
        cells = _room_cells(spec.height, spec.width, target, rng)
    else:
        cells = _warehouse_cells(spec.height, spec.width, target)
    grid = GridMap(cells)
    if grid.free_count == 0 or not grid.is_connected():
        raise GenerationError(f"could not build a connected {spec.family} map for {spec}")
    return grid


def _free_neighbors(cells: np.ndarray, r: int, c: int):
    h, w = cells.shape
    for dr, dc in DELTAS[1:]:
        rr, cc = r + dr, c + dc
        if 0 <= rr < h and 0 <= cc < w and not cells[rr, cc]:
            yield rr, cc


def _still_connected(cells: np.ndarray, removed: tuple[int, int]) -> bool:
    """Would the free space stay connected after blocking ``removed``?"""
    nbrs = list(_free_neighbors(cells, *removed))
    if len(nbrs) <= 1:
        return True
    cells[removed] = True
    try:
        seen = {nbrs[0]}
        stack = [nbrs[0]]
        targets = set(nbrs[1:])
        while stack and targets:
            cur = stack.pop()
            for nxt in _free_neighbors(cells, *cur):
                if nxt not in seen:
                    seen.add(nxt)
                    targets.discard(nxt)
                    stack.append(nxt)
        return not targets
    finally:
        cells[removed] = False


def _add_obstacles(cells: np.ndarray, count: int, rng: np.random.Generator,
                   candidates: np.ndarray | None = None) -> int:
    """Block up to ``count`` free cells without disconnecting free space."""
    if count <= 0:
        return 0
    if candidates is None:
        candidates = np.argwhere(~cells)
    order = rng.permutation(len(candidates))
    added = 0
    for idx in order:
        if added == count:
            break
        r, c = (int(v) for v in candidates[idx])
        if cells[r, c]:
            continue
        if (~cells).sum() <= 1:
            break
        if _still_connected(cells, (r, c)):
            cells[r, c] = True
            added += 1
    return added


def _remove_obstacles(cells: np.ndarray, count: int, rng: np.random.Generator) -> int:
    """Free up to ``count`` obstacle cells adjacent to existing free space."""
    removed = 0
    while removed < count:
        frontier = [(int(r), int(c)) for r, c in np.argwhere(cells)
                    if any(True for _ in _free_neighbors(cells, int(r), int(c)))]
        if not frontier:
            break
        rng.shuffle(frontier)
        for r, c in frontier[: count - removed]:
            cells[r, c] = False
            removed += 1
    return removed


def _random_cells(h: int, w: int, density: float, rng: np.random.Generator) -> np.ndarray:
    cells = np.zeros((h, w), dtype=bool)
    count = int(math.floor(density * h * w + 1e-9))
    if count >= h * w:
        raise GenerationError("density leaves no free cells")
    added = _add_obstacles(cells, count, rng)
    if added < count:
        raise GenerationError(f"only {added} of {count} obstacles fit without disconnecting the map")
    return cells


def _maze_cells(h: int, w: int, density: float, rng: np.random.Generator) -> np.ndarray:
    """Recursive backtracker on the even-coordinate lattice, then wall removal."""
    cells = np.ones((h, w), dtype=bool)
    lattice = [(r, c) for r in range(0, h, 2) for c in range(0, w, 2)]
    start = lattice[int(rng.integers(len(lattice)))]
    cells[start] = False
    stack = [start]
    while stack:
        r, c = stack[-1]
        options = [(r + 2 * dr, c + 2 * dc, r + dr, c + dc) for dr, dc in DELTAS[1:]
                   if 0 <= r + 2 * dr < h and 0 <= c + 2 * dc < w and cells[r + 2 * dr, c + 2 * dc]]
        if not options:
            stack.pop()
            continue
        nr, nc, wr, wc = options[int(rng.integers(len(options)))]
        cells[wr, wc] = False
        cells[nr, nc] = False
        stack.append((nr, nc))
    _fit_density(cells, density, rng)
    return cells


def _room_cells(h: int, w: int, density: float, rng: np.random.Generator) -> np.ndarray:
    """Rooms separated by one-cell walls, joined by door gaps, plus interior clutter."""
    room = 5
    cells = np.zeros((h, w), dtype=bool)
    wall_rows = list(range(room, h - 1, room + 1))
    wall_cols = list(range(room, w - 1, room + 1))
    for r in wall_rows:
        cells[r, :] = True
    for c in wall_cols:
        cells[:, c] = True
    row_bounds = _spans(h, wall_rows)
    col_bounds = _spans(w, wall_cols)
    # one door per wall segment between adjacent rooms keeps every room reachable
    for bi, (r0, r1) in enumerate(row_bounds):
        for bj, (c0, c1) in enumerate(col_bounds):
            if bj + 1 < len(col_bounds):
                cells[int(rng.integers(r0, r1)), wall_cols[bj]] = False
            if bi + 1 < len(row_bounds):
                cells[wall_rows[bi], int(rng.integers(c0, c1))] = False
    _fit_density(cells, density, rng)
    return cells


def _spans(n: int, walls: list[int]) -> list[tuple[int, int]]:
    out, lo = [], 0
    for wpos in walls:
        out.append((lo, wpos))
        lo = wpos + 1
    out.append((lo, n))
    return out


def _fit_density(cells: np.ndarray, density: float, rng: np.random.Generator) -> None:
    target = int(round(density * cells.size))
    current = int(cells.sum())
    if current > target:
        _remove_obstacles(cells, current - target, rng)
    elif current < target:
        added = _add_obstacles(cells, target - current, rng)
        if added < target - current:
            raise GenerationError(f"cannot reach obstacle density {density:.3f} while staying connected")


def warehouse_template(h: int, w: int, shelf_len: int) -> np.ndarray:
    """Shelf rows on odd rows; shelves of ``shelf_len`` cells split by 1-cell aisles.

    Row 0/last row (when even-indexed) and the outer columns stay free.
    """
    cells = np.zeros((h, w), dtype=bool)
    period = shelf_len + 1
    for r in range(1, h - 1, 2):
        for c in range(1, w - 1):
            if (c - 1) % period < shelf_len:
                cells[r, c] = True
    return cells


def _warehouse_cells(h: int, w: int, density: float) -> np.ndarray:
    # the shelf length whose regular template lands closest to the target
    best = min(range(1, max(2, w - 1)),
               key=lambda L: (abs(warehouse_template(h, w, L).mean() - density), L))
    return warehouse_template(h, w, best)


def sample_instance(grid: GridMap, num_agents: int, horizon: int = 0, seed: int = 0) -> Instance:
    """Random distinct starts and goals inside the largest connected free region."""
    if num_agents < 0:
        raise ValueError("agent count must be non-negative")
    if num_agents > grid.free_count:
        raise GenerationError(f"{num_agents} agents exceed the {grid.free_count} free cells")
    labels = grid.components()
    if labels.max(initial=-1) < 0:
        raise GenerationError("map has no free cells")
    sizes = np.bincount(labels[labels >= 0])
    biggest = int(np.argmax(sizes))
    region = np.argwhere(labels == biggest)
    if num_agents > len(region):
        raise GenerationError(f"{num_agents} agents exceed the {len(region)} connected free cells")
    rng = _rng(seed, 1)
    starts = region[rng.permutation(len(region))[:num_agents]]
    goals = region[rng.permutation(len(region))[:num_agents]]
    inst = Instance(grid, tuple(map(tuple, starts)), tuple(map(tuple, goals)), horizon)
    inst.validate()
    return inst


def generate_instance(spec: SceneSpec, horizon: int = 0) -> Instance:
    grid = generate_map(spec)
    return sample_instance(grid, spec.agents, horizon, seed=spec.seed)


def density_feature(instance: Instance) -> float:
    """Global agent density ``log(1 + N / |V_free|)``."""
    return math.log1p(instance.num_agents / instance.map.free_count)
