"""``difflns`` command line: gen, solve, bench, verify."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .bench import SOLVERS, ConfigError, load_run_config, parse_solvers, run_benchmark, solve_with
from .grid import Plan, PlanError, load_instance, sum_of_costs, validate_plan
from .instances import FAMILIES, PRESETS, GenerationError, SceneSpec, generate_instance
from .pipeline import PipelineConfig

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _scene_from_args(args) -> SceneSpec:
    if args.preset:
        fields = dict(PRESETS[args.preset])
    else:
        if args.family is None or args.height is None or args.width is None:
            raise ConfigError("gen needs --preset or all of --family, --height, --width")
        fields = dict(family=args.family, height=args.height, width=args.width)
    if args.density is not None:
        fields["density"] = args.density
    return SceneSpec(agents=args.agents, seed=args.seed, **fields)


def cmd_gen(args) -> int:
    inst = generate_instance(_scene_from_args(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "map.txt").write_text(inst.map.to_text())
    (out / "scen.txt").write_text(inst.scenario_text())
    print(json.dumps({"map": str(out / "map.txt"), "scen": str(out / "scen.txt"),
                      "agents": inst.num_agents, "density": inst.map.obstacle_density}))
    return EXIT_OK


def _pipeline_from_file(path: str | None) -> PipelineConfig:
    if not path:
        return PipelineConfig()
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    obj = obj.get("pipeline", obj) if isinstance(obj, dict) else obj
    try:
        return PipelineConfig(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def cmd_solve(args) -> int:
    inst = load_instance(args.map, args.scen)
    cfg = _pipeline_from_file(args.config)
    res = solve_with(args.solver or "difflns", inst, cfg, args.seed)
    if res.plan is not None and args.out:
        Path(args.out).write_text(res.plan.to_text())
    print(json.dumps({"status": res.status, "soc": res.soc, "runtime": res.runtime,
                      "rounds": res.rounds, "candidates": res.candidates}))
    return EXIT_OK if res.success else EXIT_FAIL


def cmd_bench(args) -> int:
    cfg = load_run_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.solver:
        overrides["solvers"] = parse_solvers(args.solver, "--solver")
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    out = args.out or cfg.out
    if out is None:
        raise ConfigError("bench needs --out or an 'out' field in the config")
    result = run_benchmark(cfg, out, jobs=args.jobs)
    for err in result.errors:
        print(f"error: {err}", file=sys.stderr)
    for row in result.metrics:
        print(f"{row['setting']} N={row['N']} {row['solver']}: SR={row['SR']:.3f} "
              f"SOC={row['mean_SOC']} runtime={row['mean_runtime_s']:.3f}s "
              f"candidates={row['mean_candidates']:.2f}")
    return EXIT_OK if result.completed else EXIT_FAIL


def cmd_verify(args) -> int:
    inst = load_instance(args.map, args.scen)
    plan = Plan.from_text(Path(args.plan).read_text())
    problems = validate_plan(plan, inst)
    if problems:
        for p in problems:
            print(p)
        return EXIT_FAIL
    print(f"OK soc={sum_of_costs(plan, inst.goals)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="difflns", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a map and scenario")
    gen.add_argument("--preset", choices=sorted(PRESETS))
    gen.add_argument("--family", choices=FAMILIES)
    gen.add_argument("--height", type=int)
    gen.add_argument("--width", type=int)
    gen.add_argument("--density", type=float)
    gen.add_argument("--agents", type=int, default=0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_gen)

    solve = sub.add_parser("solve", help="solve one instance")
    solve.add_argument("map")
    solve.add_argument("scen")
    solve.add_argument("--solver", choices=SOLVERS, default="difflns")
    solve.add_argument("--config", help="JSON pipeline config")
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--out", help="plan output file")
    solve.set_defaults(func=cmd_solve)

    bench = sub.add_parser("bench", help="run a benchmark config")
    bench.add_argument("--config", required=True)
    bench.add_argument("--seed", type=int, help="override the master seed")
    bench.add_argument("--solver", help="override the solver list (comma separated)")
    bench.add_argument("--out", help="output directory")
    bench.add_argument("--jobs", type=int, default=1)
    bench.set_defaults(func=cmd_bench)

    verify = sub.add_parser("verify", help="check a plan file")
    verify.add_argument("map")
    verify.add_argument("scen")
    verify.add_argument("plan")
    verify.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, GenerationError, PlanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ConfigError) else EXIT_FAIL
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
