"""Prioritized-planning initialisation and LNS2 collision repair."""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass, field
from typing import Sequence

from .grid import Cell, Instance, Plan, PlanError, colliding_pairs
from .single_agent import (DistanceField, SafeIntervalTable, UnreachableError,
                           bfs_distance_map, sipps)

log = logging.getLogger(__name__)

COLLISION = "collision"
RANDOM = "random"
STRATEGIES = (COLLISION, RANDOM)


@dataclass(frozen=True)
class RepairConfig:
    neighborhood_size: int = 8
    time_budget: float = 120.0
    collision_weight: float = 1.0
    random_weight: float = 1.0
    decay: float = 0.99
    seed: int = 0
    # Optional hard cap, useful for budget-independent reproducibility.
    max_iterations: int | None = None

    def __post_init__(self):
        if self.neighborhood_size < 1:
            raise ValueError("neighborhood_size must be >= 1")
        if not self.time_budget > 0:
            raise ValueError("time_budget must be > 0")
        if self.collision_weight < 0 or self.random_weight < 0:
            raise ValueError("strategy weights must be non-negative")


@dataclass
class RepairStats:
    iterations: int = 0
    # colliding-pair count of the input plan followed by one entry per accepted iteration
    colliding_pairs: list[int] = field(default_factory=list)
    elapsed: float = 0.0
    success: bool = False
    strategy_picks: dict[str, int] = field(default_factory=lambda: dict.fromkeys(STRATEGIES, 0))


class DestroyPortfolio:
    """Adaptive roulette over destroy heuristics.

    After each iteration the chosen strategy's weight becomes
    ``decay * w + (1 if the colliding-pair count dropped else 0)``.
    """

    def __init__(self, cfg: RepairConfig):
        self.weights = {COLLISION: cfg.collision_weight, RANDOM: cfg.random_weight}
        self.decay = cfg.decay

    def choose(self, rng: random.Random) -> str:
        total = sum(self.weights.values())
        if total <= 0:
            return rng.choice(STRATEGIES)
        x = rng.random() * total
        for name in STRATEGIES:
            x -= self.weights[name]
            if x < 0:
                return name
        return STRATEGIES[-1]

    def update(self, strategy: str, improved: bool) -> None:
        self.weights[strategy] = self.decay * self.weights[strategy] + (1.0 if improved else 0.0)


def agent_fields(instance: Instance) -> list[DistanceField]:
    cache: dict[Cell, DistanceField] = {}
    out = []
    for g in instance.goals:
        if g not in cache:
            cache[g] = bfs_distance_map(instance.map, g)
        out.append(cache[g])
    return out


def pp_init(instance: Instance, order: Sequence[int] | None = None,
            rng: random.Random | None = None, deadline: float | None = None,
            fields: list[DistanceField] | None = None) -> Plan:
    """Plan agents one at a time in ``order``; earlier paths are soft obstacles.

    Raises :class:`UnreachableError` if some agent cannot reach its goal and
    :class:`TimeoutError` if ``deadline`` passes.
    """
    n = instance.num_agents
    if order is None:
        order = list(range(n))
        (rng or random.Random(0)).shuffle(order)
    if sorted(order) != list(range(n)):
        raise ValueError("order must be a permutation of the agents")
    fields = fields or agent_fields(instance)
    table = SafeIntervalTable(instance.map)
    paths: list[tuple[Cell, ...] | None] = [None] * n
    for a in order:
        if not fields[a].reachable(instance.starts[a]):
            raise UnreachableError(f"agent {a} cannot reach its goal")
        res = sipps(instance.map, instance.starts[a], instance.goals[a], table, deadline, fields[a])
        if not res.found:
            raise TimeoutError("prioritized planning ran out of time")
        paths[a] = res.path
        table.add_path(a, res.path)
    return Plan(tuple(paths))


def select_neighborhood(paths: Sequence[Sequence[Cell]], pairs: set[tuple[int, int]],
                        cfg: RepairConfig, rng: random.Random,
                        strategy: str = COLLISION) -> list[int]:
    """Pick ``min(neighborhood_size, N)`` distinct agents to replan."""
    n = len(paths)
    size = min(cfg.neighborhood_size, n)
    if size == n:
        return list(range(n))
    if strategy == RANDOM or not pairs:
        return sorted(rng.sample(range(n), size))

    graph: dict[int, set[int]] = {}
    for i, j in pairs:
        graph.setdefault(i, set()).add(j)
        graph.setdefault(j, set()).add(i)
    i, j = rng.choice(sorted(pairs))
    chosen = [i, j][:size]
    members = set(chosen)
    # random walk over the collision graph from the seed pair
    while len(chosen) < size:
        open_members = [m for m in chosen if graph[m] - members]
        if not open_members:
            break
        m = rng.choice(open_members)
        nxt = rng.choice(sorted(graph[m] - members))
        chosen.append(nxt)
        members.add(nxt)
    if len(chosen) < size:
        # then agents whose paths cross cells used by the chosen ones
        cells = {c for a in chosen for c in paths[a]}
        near = [a for a in range(n) if a not in members and any(c in cells for c in paths[a])]
        rng.shuffle(near)
        for a in near[: size - len(chosen)]:
            chosen.append(a)
            members.add(a)
    if len(chosen) < size:
        rest = [a for a in range(n) if a not in members]
        chosen.extend(rng.sample(rest, size - len(chosen)))
    return sorted(chosen)


def _check_input(plan: Plan, instance: Instance) -> None:
    if plan.num_agents != instance.num_agents:
        raise PlanError(f"plan has {plan.num_agents} paths, instance has {instance.num_agents} agents")
    for a, (p, s, g) in enumerate(zip(plan.paths, instance.starts, instance.goals)):
        if p[0] != s or p[-1] != g:
            raise PlanError(f"path of agent {a} must run from {s} to {g}")


def lns2_repair(plan: Plan, instance: Instance, cfg: RepairConfig = RepairConfig(),
                fields: list[DistanceField] | None = None) -> tuple[Plan, RepairStats]:
    """Replan agent neighbourhoods until no colliding pairs remain or time runs out.

    An iteration's result replaces the current plan iff its colliding-pair
    count does not increase. On failure the best plan found is returned.
    """
    if not cfg.time_budget > 0:
        raise ValueError("time budget must be positive")
    _check_input(plan, instance)
    t0 = time.perf_counter()
    deadline = t0 + cfg.time_budget
    rng = random.Random(cfg.seed)
    fields = fields or agent_fields(instance)
    portfolio = DestroyPortfolio(cfg)
    paths = list(plan.paths)
    pairs = colliding_pairs(paths)
    stats = RepairStats(colliding_pairs=[len(pairs)])
    grid = instance.map

    while pairs:
        if time.perf_counter() >= deadline:
            break
        if cfg.max_iterations is not None and stats.iterations >= cfg.max_iterations:
            break
        stats.iterations += 1
        strategy = portfolio.choose(rng)
        stats.strategy_picks[strategy] += 1
        hood = select_neighborhood(paths, pairs, cfg, rng, strategy)
        hood_set = set(hood)
        table = SafeIntervalTable(grid, {a: paths[a] for a in range(len(paths)) if a not in hood_set})
        order = list(hood)
        rng.shuffle(order)
        new_paths = list(paths)
        ok = True
        for a in order:
            res = sipps(grid, instance.starts[a], instance.goals[a], table, deadline, fields[a])
            if not res.found:
                ok = False
                break
            new_paths[a] = res.path
            table.add_path(a, res.path)
        if not ok:
            portfolio.update(strategy, False)
            continue
        new_pairs = colliding_pairs(new_paths)
        improved = len(new_pairs) < len(pairs)
        portfolio.update(strategy, improved)
        if len(new_pairs) <= len(pairs):
            paths, pairs = new_paths, new_pairs
            stats.colliding_pairs.append(len(pairs))

    stats.success = not pairs
    stats.elapsed = time.perf_counter() - t0
    log.debug("lns2: %d iterations, %d colliding pairs left, %.3fs",
              stats.iterations, len(pairs), stats.elapsed)
    return Plan(tuple(paths)), stats
