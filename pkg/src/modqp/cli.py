"""Command-line entry point.

    modqp run <scenario> [--out DIR] [--mode hard|soft] [--dump-qp] [--seed N]
    modqp validate <scenario>
    modqp spheres <env> --level L [--out FILE]

Exit codes: 0 success, 2 validation error, 3 planning failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import planner, qp
from .environment import ENV_HEADER, Environment, generate_spheres, load_environment
from .errors import ModqpError
from .fileio import dump_text
from .scenario import dump_scenario, load_scenario

EXIT_OK, EXIT_INVALID, EXIT_FAILED, EXIT_IO = 0, 2, 3, 4


def _exists(path: str) -> bool:
    if not Path(path).is_file():
        print(f"error: {path}: no such file", file=sys.stderr)
        return False
    return True


def cmd_validate(args) -> int:
    if not _exists(args.scenario):
        return EXIT_IO
    scn = load_scenario(args.scenario)
    model = scn.build_model()
    print(f"scenario {scn.name}: {len(scn.config.modules)} modules, "
          f"{len(scn.config.connections)} connections, {model.n} controlled joints")
    for goal, chain in zip(scn.goals, model.chains):
        kind = "destination" if goal.destination else f"{len(goal.times)} waypoints"
        print(f"  goal {goal.frame}: {kind}, chain joints {', '.join(chain.joints) or '(none)'}")
    env = scn.environment
    faces = len(env.boundary) if env.boundary is not None else 0
    print(f"  environment: {faces} boundary faces, {len(env.boxes)} boxes, {len(env.spheres)} spheres")
    return EXIT_OK


def cmd_run(args) -> int:
    if not _exists(args.scenario):
        return EXIT_IO
    scn = load_scenario(args.scenario, seed=args.seed)
    out = Path(args.out) if args.out else Path("out") / scn.name
    try:
        out.mkdir(parents=True, exist_ok=True)
        qp_dir = out / "qp"
        if args.dump_qp:
            qp_dir.mkdir(exist_ok=True)
            for old in qp_dir.glob("step_*.json"):
                old.unlink()
        (out / "scenario.scn").write_text(dump_scenario(scn))
    except OSError as exc:
        print(f"error: cannot write to {out}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO

    def dump(step, outcome):
        qp.dump_program(qp_dir / f"step_{step:05d}.json", outcome.program, outcome.solution,
                        step=step, t=step * outcome_dt)

    outcome_dt = scn.tuning.dt
    start = time.perf_counter()
    try:
        with open(out / "commands.csv", "w") as stream:
            result, log = planner.run(scn, mode=args.mode, sinks=[planner.StreamSink(stream)],
                                      on_step=dump if args.dump_qp else None)
        wall = time.perf_counter() - start
        log.write_csv(out / "trajectory.csv")
        log.write_goals_csv(out / "goals.csv")
        errors = log.goal_errors(scn.goals)
        stats = log.solve_time_stats()
        metrics = {
            "scenario": str(args.scenario), "result": bool(result), "reason": log.reason,
            "mode": args.mode or scn.tuning.mode, "seed": scn.seed, "steps": len(log),
            "wall_time": wall, "solve_time_mean": stats["mean"], "solve_time_std": stats["std"],
            "solve_time_max": stats["max"],
            "final_goal_error": float(sum(
                float(((p - g.final) ** 2).sum()) ** 0.5
                for p, g in zip(log.final_goal_positions, scn.goals))),
            "min_boundary_margin": _finite_min([r.boundary_margin for r in log.records]),
            "min_obstacle_margin": _finite_min([r.obstacle_margin for r in log.records]),
            "initial_goal_error": float(errors[0]) if len(errors) else None,
        }
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    except OSError as exc:
        print(f"error: writing results to {out}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    print(f"{scn.name}: {'reached goals' if result else 'failed'} ({log.reason}) after {len(log)} steps; "
          f"mean solve {1e3 * stats['mean']:.2f} ms; results in {out}")
    return EXIT_OK if result else EXIT_FAILED


def _finite_min(values):
    vals = [v for v in values if v == v and v != float("inf")]
    return min(vals) if vals else None


def cmd_spheres(args) -> int:
    if not _exists(args.env):
        return EXIT_IO
    env = load_environment(args.env, seed=args.seed)
    spheres = []
    for box, _ in env.boxes:
        spheres.extend(generate_spheres(box, args.level))
    spheres.extend(env.extra_spheres)
    flat = Environment(env.boundary, [], spheres)
    text = dump_text(flat.to_tree(), ENV_HEADER)
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            print(f"error: cannot write {args.out}: {exc.strerror}", file=sys.stderr)
            return EXIT_IO
        print(f"{len(spheres)} spheres written to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modqp", description="QP velocity planning for modular robots")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write its logs")
    p.add_argument("scenario")
    p.add_argument("--out", help="output directory (default out/<scenario name>)")
    p.add_argument("--mode", choices=[qp.HARD, qp.SOFT], help="override the scenario's QP mode")
    p.add_argument("--dump-qp", action="store_true", help="write every step's program as JSON")
    p.add_argument("--seed", type=int, help="seed for randomized obstacles")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a scenario and print a summary")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("spheres", help="write the sphere cover of an environment's boxes")
    p.add_argument("env")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_spheres)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ModqpError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
