"""Draft, repair, select, retry: the DiffLNS solve loop and a PP multistart baseline."""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .d3pm import Predictor, cosine_schedule, sample
from .grid import Instance, Plan, rollout, sum_of_costs, validate_plan
from .lns2 import RepairConfig, agent_fields, lns2_repair, pp_init
from .seeding import derive_seed
from .single_agent import DistanceField, shortest_suffix

log = logging.getLogger(__name__)

SUCCESS = "success"
FAILURE = "failure"
PREDICTORS = ("heuristic", "neural")


@dataclass(frozen=True)
class PipelineConfig:
    drafts_per_round: int = 4
    max_rounds: int = 5
    time_budget: float = 180.0
    repair_budget: float = 120.0
    max_candidates: int = 20
    predictor: str = "heuristic"
    weights: str | None = None      # weight file for the neural predictor
    param_seed: int = 0             # initialisation seed when no weight file is given
    num_steps: int = 100
    neighborhood_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.drafts_per_round < 1 or self.max_rounds < 1:
            raise ValueError("drafts_per_round and max_rounds must be >= 1")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")
        if not (self.time_budget > 0 and self.repair_budget > 0):
            raise ValueError("time budgets must be > 0")
        if self.predictor not in PREDICTORS:
            raise ValueError(f"unknown predictor {self.predictor!r}; expected one of {PREDICTORS}")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")


@dataclass
class CandidateRecord:
    round: int
    index: int
    seed: int
    status: str
    soc: int | None = None
    # colliding-pair counts: initial plan, then one per accepted repair iteration
    repair_trajectory: list[int] = field(default_factory=list)
    repair_iterations: int = 0
    elapsed: float = 0.0
    error: str | None = None


@dataclass
class SolveResult:
    status: str
    plan: Plan | None
    soc: int | None
    rounds: int
    candidates: int
    runtime: float
    log: list[CandidateRecord] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status == SUCCESS


def preprocess_draft(draft: np.ndarray, instance: Instance,
                     fields: list[DistanceField] | None = None) -> Plan:
    """Turn a one-hot action draft into goal-terminated paths.

    Each agent's actions are rolled out (invalid moves become stays). If the
    rollout ends resting at the goal, the redundant resting suffix is cut.
    Otherwise trailing stays are dropped and a shortest static path to the
    goal is appended.
    """
    draft = np.asarray(draft)
    if draft.shape[0] != instance.num_agents:
        raise ValueError(f"draft has {draft.shape[0]} agents, instance has {instance.num_agents}")
    fields = fields or agent_fields(instance)
    actions = np.argmax(draft, axis=-1)
    paths = []
    for a, (s, g) in enumerate(zip(instance.starts, instance.goals)):
        path = rollout(s, actions[a], instance.map)
        while len(path) > 1 and path[-1] == path[-2]:
            path.pop()
        if path[-1] != g:
            path.extend(shortest_suffix(instance.map, path[-1], g, fields[a]))
        paths.append(tuple(path))
    return Plan(tuple(paths))


def make_predictor(cfg: PipelineConfig) -> Predictor:
    if cfg.predictor == "heuristic":
        from .denoiser.heuristic import HeuristicPredictor
        return HeuristicPredictor()
    from .denoiser.network import NeuralPredictor
    from .denoiser.params import DenoiserConfig, init_params, load_params
    if cfg.weights:
        params = load_params(cfg.weights)
    else:
        params = init_params(cfg.param_seed, DenoiserConfig(num_steps=cfg.num_steps))
    return NeuralPredictor(params)


# A candidate initialiser maps (candidate seed, deadline) to an initial plan.
Initializer = Callable[[int, float], Plan]


def _solve_loop(instance: Instance, cfg: PipelineConfig, seed: int, init: Initializer,
                fields: list[DistanceField], t0: float) -> SolveResult:
    deadline = t0 + cfg.time_budget
    records: list[CandidateRecord] = []
    rounds = 0
    for r in range(cfg.max_rounds):
        if time.perf_counter() >= deadline or len(records) >= cfg.max_candidates:
            break
        rounds = r + 1
        feasible: list[tuple[int, int, Plan]] = []
        for m in range(cfg.drafts_per_round):
            if len(records) >= cfg.max_candidates or time.perf_counter() >= deadline:
                break
            cseed = derive_seed(seed, r, m)
            rec = CandidateRecord(round=r, index=m, seed=cseed, status=FAILURE)
            c0 = time.perf_counter()
            try:
                plan = init(cseed, deadline)
                budget = min(cfg.repair_budget, deadline - time.perf_counter())
                if budget <= 0:
                    raise TimeoutError("no time left for repair")
                rcfg = RepairConfig(neighborhood_size=cfg.neighborhood_size, time_budget=budget, seed=cseed)
                plan, stats = lns2_repair(plan, instance, rcfg, fields)
                rec.repair_trajectory = list(stats.colliding_pairs)
                rec.repair_iterations = stats.iterations
                if stats.success:
                    problems = validate_plan(plan, instance)
                    if problems:
                        raise RuntimeError(f"repaired plan failed validation: {problems[0]}")
                    rec.status = SUCCESS
                    rec.soc = sum_of_costs(plan, instance.goals)
                    feasible.append((rec.soc, m, plan))
            except Exception as exc:  # a faulty candidate must not abort the round
                rec.error = f"{type(exc).__name__}: {exc}"
                log.debug("candidate (%d, %d) failed: %s", r, m, rec.error)
            rec.elapsed = time.perf_counter() - c0
            records.append(rec)
        if feasible:
            soc, _, plan = min(feasible, key=lambda item: (item[0], item[1]))
            return SolveResult(SUCCESS, plan, soc, rounds, len(records),
                               time.perf_counter() - t0, records)
    return SolveResult(FAILURE, None, None, rounds, len(records), time.perf_counter() - t0, records)


def difflns_solve(instance: Instance, predictor: Predictor | None = None,
                  cfg: PipelineConfig = PipelineConfig(), seed: int | None = None) -> SolveResult:
    """Sample diffusion drafts in rounds, repair each, return the cheapest feasible one.

    Runtime covers both draft generation and repair.
    """
    t0 = time.perf_counter()
    seed = cfg.seed if seed is None else seed
    predictor = predictor or make_predictor(cfg)
    schedule = cosine_schedule(cfg.num_steps)
    fields = agent_fields(instance)

    def init(cseed: int, deadline: float) -> Plan:
        draft = sample(predictor, instance, schedule, cseed)
        return preprocess_draft(draft, instance, fields)

    return _solve_loop(instance, cfg, seed, init, fields, t0)


def pp_multistart_solve(instance: Instance, cfg: PipelineConfig = PipelineConfig(),
                        seed: int | None = None) -> SolveResult:
    """Same loop as :func:`difflns_solve` with prioritized-planning initial plans
    under fresh random priority orders."""
    t0 = time.perf_counter()
    seed = cfg.seed if seed is None else seed
    fields = agent_fields(instance)

    def init(cseed: int, deadline: float) -> Plan:
        return pp_init(instance, rng=random.Random(cseed), deadline=deadline, fields=fields)

    return _solve_loop(instance, cfg, seed, init, fields, t0)


def lns2_solve(instance: Instance, cfg: PipelineConfig = PipelineConfig(),
               seed: int | None = None) -> SolveResult:
    """Single prioritized-planning start repaired once with the full time budget."""
    t0 = time.perf_counter()
    seed = cfg.seed if seed is None else seed
    single = PipelineConfig(drafts_per_round=1, max_rounds=1, max_candidates=1,
                            time_budget=cfg.time_budget,
                            repair_budget=min(cfg.repair_budget, cfg.time_budget),
                            neighborhood_size=cfg.neighborhood_size, seed=seed)
    fields = agent_fields(instance)

    def init(cseed: int, deadline: float) -> Plan:
        return pp_init(instance, rng=random.Random(cseed), deadline=deadline, fields=fields)

    return _solve_loop(instance, single, seed, init, fields, t0)
