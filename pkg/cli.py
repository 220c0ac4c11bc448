"""Command-line entry point: pwa-abstraction <subcommand> [options]."""
import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import structlog

from app.abstraction import build_abstraction, build_cover, load_abstraction, save_abstraction
from app.adapters.manager import available_noise_models
from app.config import settings
from app.errors import AbstractionToolkitError, SchemaError
from app.experiments import (
    SweepSpec,
    emit_plot_data,
    run_optimal_control_experiment,
    run_single_transition_sweep,
    run_transition,
    sweep_columns,
    trajectory_rows,
    transition_problem_from_config,
)
from app.models.system import ExperimentConfig, SweepConfig, TransitionProblemConfig, region_of
from app.planner import check_bellman, read_values_csv, reverse_dijkstra, write_values_csv
from app.simulator import certify_cost, rollout
from app.utils.log_setup import configure_logging
from app.utils.validators import load_config

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _coords(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from exc


def _write_json(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text + "\n")


def cmd_synthesize_transition(args) -> int:
    config = load_config(args.config, TransitionProblemConfig)
    record = run_transition(transition_problem_from_config(config), dump_sdp=args.dump_sdp)
    _write_json(record.model_dump_json(indent=2), args.out)
    if record.audit is not None and not record.audit.passed:
        logger.error("transition_audit_failed", witness=record.audit.witness)
        return EXIT_FAILED
    logger.info("transition_done", status=record.status, spectral_radius=record.spectral_radius)
    return EXIT_OK


def cmd_build_abstraction(args) -> int:
    config = load_config(args.config, ExperimentConfig)
    system = config.system.to_system()
    radius = args.radius if args.radius is not None else config.radius
    cover = build_cover(system.domain, radius, system)
    graph = build_abstraction(
        system, cover, region_of(config.goal), [region_of(o) for o in config.obstacles],
        config.system.to_cost(), workers=args.threads, progress=args.progress,
    )
    size = save_abstraction(graph, args.out)
    logger.info("build_done", cells=len(cover), edges=len(graph.edges), bytes=size)
    return EXIT_OK


def cmd_plan(args) -> int:
    graph = load_abstraction(args.abstraction)
    vf = reverse_dijkstra(graph)
    report = check_bellman(graph, vf)
    write_values_csv(vf, graph.cover, args.out)
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_simulate(args) -> int:
    config = load_config(args.config, ExperimentConfig)
    system = config.system.to_system()
    cost = config.system.to_cost()
    graph = load_abstraction(args.abstraction)
    vf = read_values_csv(args.values, graph)
    report = check_bellman(graph, vf)
    if not report.passed:
        return EXIT_FAILED
    x0 = np.array(args.x0) if args.x0 is not None else config.start_state()
    obstacles = [region_of(o) for o in config.obstacles]

    runs, passed = [], True
    for seed in range(args.seed, args.seed + args.seeds):
        run = rollout(system, graph.cover, graph, vf, cost, x0, seed, max_steps=config.max_steps, noise=args.noise)
        runs.append(run)
        if not run.reached_goal:
            logger.warning("rollout_timed_out", seed=seed, steps=run.steps)
            passed = False
            continue
        certificate = certify_cost(run, vf, graph.cover)
        hit = any(o.contains(x) for x in run.states for o in obstacles)
        if not certificate.passed or hit:
            logger.error("rollout_not_certified", seed=seed, message=certificate.message, hit_obstacle=hit)
            passed = False
    columns, rows = trajectory_rows(runs)
    emit_plot_data(rows, args.out, columns)
    return EXIT_OK if passed else EXIT_FAILED


def cmd_sweep(args) -> int:
    config = load_config(args.config, SweepConfig)
    rows = run_single_transition_sweep(SweepSpec.from_config(config), workers=args.threads)
    emit_plot_data([r.model_dump() for r in rows], args.out, sweep_columns(args.with_timing))
    return EXIT_OK if all(r.audit_passed is not False for r in rows) else EXIT_FAILED


def cmd_experiment(args) -> int:
    config = load_config(args.config, ExperimentConfig)
    seeds = range(args.seed, args.seed + args.seeds) if args.seeds is not None else None
    artifacts = run_optimal_control_experiment(config, args.out, workers=args.threads, seeds=seeds,
                                               progress=args.progress)
    for failure in artifacts.failures:
        logger.error("experiment_check_failed", reason=failure)
    return EXIT_OK if artifacts.passed else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON problem definition")
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int, default=0, help="first rollout seed")
    common.add_argument("--threads", type=int, default=settings.WORKERS, help="worker count")
    common.add_argument("--verbose", action="store_true", help="debug logs on the console")

    parser = argparse.ArgumentParser(prog="pwa-abstraction", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize-transition", parents=[common], help="one source/target synthesis")
    p.add_argument("--dump-sdp", help="write the assembled SDP as JSON")
    p.set_defaults(handler=cmd_synthesize_transition, needs=("config",))

    p = sub.add_parser("build-abstraction", parents=[common], help="cover, prune and synthesize all edges")
    p.add_argument("--radius", type=float, help="overrides the config radius")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(handler=cmd_build_abstraction, needs=("config", "out"))

    p = sub.add_parser("plan", parents=[common], help="value function and policy")
    p.add_argument("--abstraction", required=True)
    p.set_defaults(handler=cmd_plan, needs=("out",))

    p = sub.add_parser("simulate", parents=[common], help="seeded closed-loop rollouts")
    p.add_argument("--abstraction", required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--x0", type=_coords, help="comma-separated start state")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--noise", choices=available_noise_models(), default="uniform")
    p.set_defaults(handler=cmd_simulate, needs=("config", "out"))

    p = sub.add_parser("sweep", parents=[common], help="single-transition parameter sweep")
    p.add_argument("--with-timing", action="store_true", help="add the solve_time column")
    p.set_defaults(handler=cmd_sweep, needs=("config", "out"))

    p = sub.add_parser("experiment", parents=[common], help="build, plan, simulate and certify")
    p.add_argument("--seeds", type=int, help="rollout count, defaults to the config")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(handler=cmd_experiment, needs=("config", "out"))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    missing = [f"--{name}" for name in args.needs if getattr(args, name) is None]
    if missing:
        parser.error(f"{args.command} requires {', '.join(missing)}")
    if args.verbose:
        configure_logging("DEBUG", "console")
    else:
        configure_logging(settings.LOG_LEVEL, settings.LOG_FORMAT)

    try:
        return args.handler(args)
    except SchemaError as e:
        logger.error("invalid_input", code=e.code, error=e.message, details=e.details)
        return EXIT_USAGE
    except AbstractionToolkitError as e:
        logger.error("command_failed", command=args.command, code=e.code, error=e.message, details=e.details)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
