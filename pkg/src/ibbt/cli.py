"""Command line interface: plan, benchmark, and render subcommands.

Exit codes: 0 success (plan: a solution was found), 2 budget exhausted
without a solution, 1 usage or configuration errors. The IBBT_LOG
environment variable (debug/info/warning) controls log verbosity.
"""

import argparse
import logging
import os
import sys

from . import __version__
from .bench import benchmark
from .planner import IBBT, RRBT, Planner
from .render import render_scene, solution_payload
from .results import load_result, write_anytime_csv, write_result_json
from .scenario_io import ScenarioError, load_scenario, resolve_scenario

log = logging.getLogger("ibbt")


def _setup_logging():
    level_name = os.environ.get("IBBT_LOG", "warning").lower()
    level = {
        "debug": logging.DEBUG,
        "info": logging.INFO,
        "warning": logging.WARNING,
        "error": logging.ERROR,
    }.get(level_name, logging.WARNING)
    logging.basicConfig(
        level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ibbt",
        description="Belief-space motion planning over batch nominal-trajectory "
                    "graphs, with an informed anytime search and a baseline.",
    )
    parser.add_argument("--version", action="version", version=f"ibbt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="run one planner on a scenario")
    p_plan.add_argument("--scenario", required=True,
                        help="scenario file path or shipped scenario name")
    p_plan.add_argument("--planner", choices=[IBBT, RRBT], default=None,
                        help="override the scenario's planner mode")
    p_plan.add_argument("--seed", type=int, default=None)
    p_plan.add_argument("--batch-size", type=int, default=None)
    p_plan.add_argument("--delta", type=float, default=None,
                        help="override the chance-constraint threshold")
    p_plan.add_argument("--mc-samples", type=int, default=None)
    p_plan.add_argument("--max-seconds", type=float, default=None)
    p_plan.add_argument("--max-batches", type=int, default=None)
    p_plan.add_argument("--out", default="ibbt_out", help="output directory")

    p_bench = sub.add_parser("benchmark", help="seeded planner comparison")
    p_bench.add_argument("--scenario", required=True)
    p_bench.add_argument("--seeds", type=int, required=True,
                         help="number of seeds (0..N-1)")
    p_bench.add_argument("--planners", default="ibbt,rrbt",
                         help="comma-separated planner list")
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--budget-seconds", type=float, default=None)
    p_bench.add_argument("--budget-batches", type=int, default=None)
    p_bench.add_argument("--stop-after-first", action="store_true",
                         help="stop each run at its first solution")

    p_render = sub.add_parser("render", help="draw a result file to SVG")
    p_render.add_argument("--result", required=True, help="result JSON path")
    p_render.add_argument("--out", required=True, help="output SVG path")
    return parser


def _apply_overrides(config, args):
    if args.planner is not None:
        config.mode = args.planner
    if args.seed is not None:
        config.seed = args.seed
    if args.batch_size is not None:
        config.batch_size = args.batch_size
    if args.mc_samples is not None:
        config.mc_samples = args.mc_samples
    if args.max_seconds is not None:
        config.max_seconds = args.max_seconds
    if args.max_batches is not None:
        config.max_batches = args.max_batches
    return config


def _cmd_plan(args):
    scenario, config = load_scenario(resolve_scenario(args.scenario))
    config = _apply_overrides(config, args)
    if args.delta is not None:
        if not (0.0 < args.delta < 1.0):
            raise ScenarioError("--delta must lie strictly between 0 and 1")
        scenario.delta = args.delta
    os.makedirs(args.out, exist_ok=True)
    emitted = []

    def on_solution(snapshot):
        index = len(emitted)
        path = os.path.join(args.out, f"solution_{index:03d}.svg")
        render_scene(
            scenario,
            path,
            graph_polylines=snapshot["graph_polylines"],
            tree_beliefs=snapshot["tree_beliefs"],
            solution_polyline=snapshot["solution_polyline"],
            solution_beliefs=snapshot["solution_beliefs"],
            title=f"{scenario.name}: cost {snapshot['cost']:.4f} "
                  f"(batch {snapshot['batch']})",
        )
        emitted.append(path)
        print(f"solution {index}: cost {snapshot['cost']:.6f} -> {path}")

    planner = Planner(scenario, config, on_solution=on_solution)
    result = planner.run()
    write_result_json(result, os.path.join(args.out, "result.json"))
    write_anytime_csv(result, os.path.join(args.out, "anytime.csv"))
    from .results import solution_polyline

    render_scene(
        scenario,
        os.path.join(args.out, "final.svg"),
        graph_polylines=[e.nominal_states[:, :2] for e in result.graph.edges.values()],
        tree_beliefs=[
            (result.graph.vertices[n.vertex].state[:2], n.P[:2, :2])
            for n in result.tree.values()
        ],
        solution_polyline=solution_polyline(result),
        solution_beliefs=[
            (result.graph.vertices[s.vertex].state[:2], s.P[:2, :2])
            for s in result.path
        ],
        title=f"{scenario.name}: final ({config.mode}, seed {config.seed})",
    )
    with open(os.path.join(args.out, "graph.txt"), "w") as fh:
        fh.write(result.graph.dump_text())
    if result.solved:
        print(f"solved: cost {result.cost:.6f} in {result.stats['wall_s']:.2f}s "
              f"({result.stats['batches']} batches, "
              f"{result.stats['vertices']} vertices)")
        return 0
    print("no solution within budget", file=sys.stderr)
    return 2


def _cmd_benchmark(args):
    scenario, config = load_scenario(resolve_scenario(args.scenario))
    planners = [p.strip() for p in args.planners.split(",") if p.strip()]
    for p in planners:
        if p not in (IBBT, RRBT):
            raise ScenarioError(f"unknown planner {p!r} in --planners")
    if args.seeds < 1:
        raise ScenarioError("--seeds must be at least 1")
    report = benchmark(
        scenario,
        config,
        seeds=list(range(args.seeds)),
        planners=planners,
        out_dir=args.out,
        max_seconds=args.budget_seconds,
        max_batches=args.budget_batches,
        stop_after_first=args.stop_after_first,
    )
    for mode, agg in sorted(report["planners"].items()):
        med_cost = agg["median_cost"]
        med_first = agg["median_first_solution_wall_s"]
        print(
            f"{mode}: solved {agg['solved']}/{agg['runs']}, "
            f"median cost {med_cost if med_cost is not None else 'n/a'}, "
            f"median first solution "
            f"{f'{med_first:.3f}s' if med_first is not None else 'n/a'}"
        )
    print(f"report written to {os.path.join(args.out, 'report.json')}")
    return 0


def _cmd_render(args):
    data = load_result(args.result)
    spec = data.get("scenario_spec")
    if spec is None:
        raise ScenarioError("result file lacks an embedded scenario_spec")
    from .scenario_io import scenario_from_dict

    scenario, _ = scenario_from_dict(spec, path=args.result)
    polyline, beliefs = solution_payload(data)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    render_scene(
        scenario,
        args.out,
        solution_polyline=polyline if len(polyline) else None,
        solution_beliefs=beliefs,
        title=f"{data.get('scenario', 'scenario')} ({data.get('planner')}, "
              f"cost {data.get('cost')})",
    )
    print(f"wrote {args.out}")
    return 0


def main(argv=None):
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "plan":
            return _cmd_plan(args)
        if args.command == "benchmark":
            return _cmd_benchmark(args)
        if args.command == "render":
            return _cmd_render(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
