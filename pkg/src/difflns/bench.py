"""Benchmark runs: JSON run configs, per-instance logs and CSV metrics.

Run config (JSON)::

    {
      "seed": 0,
      "solvers": ["difflns", "pp-multistart"],
      "pipeline": {"drafts_per_round": 4, "max_rounds": 5, ...},
      "settings": [
        {"name": "small-random", "scene": {"preset": "small-random"},
         "agents": [20], "instances": 50, "time_limit": 180}
      ]
    }

``scene`` is either ``{"preset": name}`` or explicit ``family``, ``height``,
``width`` and optional ``density`` fields. Each (setting, agent count,
solver) triple produces one metrics row. Instances depend only on the master
seed, the setting index, the agent count and the instance index, so every
solver sees the same instance set.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .instances import PRESETS, SceneSpec, generate_instance
from .pipeline import (PipelineConfig, SolveResult, difflns_solve, lns2_solve,
                       pp_multistart_solve)
from .seeding import derive_seed

SOLVERS = ("difflns", "lns2", "pp-multistart")
METRIC_COLUMNS = ("setting", "solver", "family", "N", "instances", "SR", "mean_SOC",
                  "mean_runtime_s", "mean_candidates")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Setting:
    name: str
    scene: SceneSpec            # agents and seed are filled in per instance
    agents: tuple[int, ...]
    instances: int
    time_limit: float


@dataclass(frozen=True)
class RunConfig:
    settings: tuple[Setting, ...]
    solvers: tuple[str, ...] = ("difflns",)
    pipeline: PipelineConfig = PipelineConfig()
    seed: int = 0
    out: str | None = None


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ConfigError(f"{where}: missing field {key!r}")
    return obj[key]


def _check_keys(obj: dict, allowed: Iterable[str], where: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {unknown}")


def _parse_scene(obj: Any, where: str) -> SceneSpec:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    if "preset" in obj:
        _check_keys(obj, ("preset",), where)
        if obj["preset"] not in PRESETS:
            raise ConfigError(f"{where}.preset: unknown preset {obj['preset']!r}; "
                              f"expected one of {sorted(PRESETS)}")
        fields = dict(PRESETS[obj["preset"]])
    else:
        _check_keys(obj, ("family", "height", "width", "density"), where)
        fields = {k: _require(obj, k, where) for k in ("family", "height", "width")}
        fields["density"] = obj.get("density")
    try:
        return SceneSpec(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_setting(obj: Any, index: int) -> Setting:
    where = f"settings[{index}]"
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    _check_keys(obj, ("name", "scene", "agents", "instances", "time_limit"), where)
    scene = _parse_scene(_require(obj, "scene", where), f"{where}.scene")
    agents = _require(obj, "agents", where)
    if isinstance(agents, int):
        agents = [agents]
    if not agents or not all(isinstance(a, int) and a >= 1 for a in agents):
        raise ConfigError(f"{where}.agents: expected positive integers, got {agents!r}")
    instances = _require(obj, "instances", where)
    if not isinstance(instances, int) or instances < 1:
        raise ConfigError(f"{where}.instances: must be an integer >= 1, got {instances!r}")
    limit = obj.get("time_limit", 180.0)
    if not isinstance(limit, (int, float)) or not limit > 0:
        raise ConfigError(f"{where}.time_limit: must be > 0, got {limit!r}")
    name = obj.get("name", f"{scene.family}-{scene.height}x{scene.width}")
    return Setting(str(name), scene, tuple(agents), instances, float(limit))


def parse_solvers(value: Any, where: str) -> tuple[str, ...]:
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where}: expected a non-empty list of solver names")
    for s in value:
        if s not in SOLVERS:
            raise ConfigError(f"{where}: unknown solver {s!r}; expected one of {SOLVERS}")
    return tuple(value)


def parse_run_config(obj: Any) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config: expected a JSON object at the top level")
    _check_keys(obj, ("settings", "solvers", "solver", "pipeline", "seed", "out"), "config")
    settings = _require(obj, "settings", "config")
    if not isinstance(settings, list) or not settings:
        raise ConfigError("config.settings: expected a non-empty list")
    parsed = tuple(_parse_setting(s, i) for i, s in enumerate(settings))
    solvers = ("difflns",)
    if "solver" in obj:
        solvers = parse_solvers(obj["solver"], "config.solver")
    if "solvers" in obj:
        solvers = parse_solvers(obj["solvers"], "config.solvers")
    pipe = obj.get("pipeline", {})
    if not isinstance(pipe, dict):
        raise ConfigError("config.pipeline: expected an object")
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    _check_keys(pipe, known, "config.pipeline")
    try:
        pipeline = PipelineConfig(**pipe)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.pipeline: {exc}") from exc
    seed = obj.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"config.seed: expected a non-negative integer, got {seed!r}")
    return RunConfig(parsed, solvers, pipeline, seed, obj.get("out"))


def load_run_config(path: str | Path) -> RunConfig:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_run_config(obj)


# --------------------------------------------------------------------------
# execution


@dataclass(frozen=True)
class Task:
    setting_index: int
    setting: str
    solver: str
    scene: SceneSpec
    agents: int
    instance: int
    instance_seed: int
    solver_seed: int
    pipeline: PipelineConfig


def plan_tasks(cfg: RunConfig) -> list[Task]:
    tasks = []
    for si, setting in enumerate(cfg.settings):
        for n in setting.agents:
            pipe = dataclasses.replace(cfg.pipeline, time_budget=setting.time_limit)
            for solver in cfg.solvers:
                for idx in range(setting.instances):
                    iseed = derive_seed(cfg.seed, si, n, idx)
                    scene = dataclasses.replace(setting.scene, agents=n, seed=iseed)
                    tasks.append(Task(si, setting.name, solver, scene, n, idx, iseed,
                                      derive_seed(iseed, 1), pipe))
    return tasks


def solve_with(solver: str, instance, pipeline: PipelineConfig, seed: int) -> SolveResult:
    if solver == "difflns":
        return difflns_solve(instance, cfg=pipeline, seed=seed)
    if solver == "pp-multistart":
        return pp_multistart_solve(instance, cfg=pipeline, seed=seed)
    if solver == "lns2":
        return lns2_solve(instance, cfg=pipeline, seed=seed)
    raise ValueError(f"unknown solver {solver!r}")


def run_task(task: Task) -> dict:
    t0 = time.perf_counter()
    record = {"setting": task.setting, "solver": task.solver, "family": task.scene.family,
              "N": task.agents, "instance": task.instance, "seed": task.instance_seed,
              "solver_seed": task.solver_seed, "scene": dataclasses.asdict(task.scene)}
    try:
        inst = generate_instance(task.scene)
        res = solve_with(task.solver, inst, task.pipeline, task.solver_seed)
    except Exception as exc:  # generation faults count as failed instances
        record.update(status="failure", soc=None, runtime=time.perf_counter() - t0, candidates=0,
                      rounds=0, error=f"{type(exc).__name__}: {exc}", candidate_log=[])
        return record
    record.update(
        status=res.status, soc=res.soc, runtime=res.runtime, candidates=res.candidates,
        rounds=res.rounds,
        candidate_log=[{"round": c.round, "index": c.index, "status": c.status, "soc": c.soc,
                        "repair_trajectory": c.repair_trajectory,
                        "repair_iterations": c.repair_iterations, "error": c.error}
                       for c in res.log])
    if res.plan is not None:
        record["plan"] = [list(map(list, p)) for p in res.plan.paths]
    return record


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def aggregate(records: list[dict]) -> list[dict]:
    """One metrics row per (setting, N, solver), in first-appearance order.

    SR counts successes; mean SOC covers successes only; mean runtime and
    mean candidates cover all instances.
    """
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        groups.setdefault((rec["setting"], rec["N"], rec["solver"]), []).append(rec)
    rows = []
    for (setting, n, solver), recs in groups.items():
        ok = [r for r in recs if r["status"] == "success"]
        rows.append({
            "setting": setting, "solver": solver, "family": recs[0]["family"], "N": n,
            "instances": len(recs), "SR": len(ok) / len(recs),
            "mean_SOC": _mean([r["soc"] for r in ok]),
            "mean_runtime_s": _mean([r["runtime"] for r in recs]),
            "mean_candidates": _mean([r["candidates"] for r in recs]),
        })
    return rows


def write_metrics(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in rows:
            # repr keeps every float digit so the log recomputation is exact
            writer.writerow({k: ("" if row[k] is None else repr(row[k]) if isinstance(row[k], float)
                                 else row[k]) for k in METRIC_COLUMNS})


def read_metrics(path: str | Path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({
                "setting": row["setting"], "solver": row["solver"], "family": row["family"],
                "N": int(row["N"]), "instances": int(row["instances"]), "SR": float(row["SR"]),
                "mean_SOC": float(row["mean_SOC"]) if row["mean_SOC"] else None,
                "mean_runtime_s": float(row["mean_runtime_s"]),
                "mean_candidates": float(row["mean_candidates"]),
            })
    return out


def read_log(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


@dataclass
class BenchmarkResult:
    records: list[dict]
    metrics: list[dict]
    completed: bool
    log_path: Path | None = None
    metrics_path: Path | None = None
    errors: list[str] = field(default_factory=list)


def run_benchmark(cfg: RunConfig, out_dir: str | Path | None = None, jobs: int = 1) -> BenchmarkResult:
    """Run every task of ``cfg``; write ``log.jsonl`` and ``metrics.csv`` into ``out_dir``.

    With ``jobs > 1`` instances run in a process pool; records are still
    written in task order.
    """
    tasks = plan_tasks(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(run_task, tasks))
    else:
        records = [run_task(t) for t in tasks]
    errors = [f"{r['setting']} N={r['N']} #{r['instance']}: {r['error']}"
              for r in records if "error" in r]
    result = BenchmarkResult(records, aggregate(records), completed=not errors, errors=errors)
    out_dir = out_dir or cfg.out
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.log_path = out / "log.jsonl"
        result.metrics_path = out / "metrics.csv"
        with open(result.log_path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
        write_metrics(result.metrics, result.metrics_path)
    return result
