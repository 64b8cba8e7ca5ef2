"""Benchmark harness: repeated seeded runs, delimited output, and figures.

For each (planner, seed) pair one planning run executes under a shared
budget. Per-run rows land in runs.csv, anytime traces in curves.csv,
aggregate medians in report.json, and a cost-versus-time figure in
cost_vs_time.svg.
"""

import csv
import json
import logging
import math
import os
import time
from dataclasses import replace

import numpy as np

from .planner import Planner
from .render import render_cost_curves, step_cost_at

log = logging.getLogger("ibbt")

RUN_FIELDS = [
    "planner", "seed", "cost", "first_solution_wall_s", "first_solution_cost",
    "first_solution_batch", "queue_pops", "propagations_evaluated",
    "nodes_created", "vertices", "edges", "batches", "wall_s",
]


def run_single(scenario, config, mode, seed, max_seconds=None, max_batches=None,
               stop_after_first=False):
    """One benchmark run; returns (record dict, PlanResult)."""
    cfg = replace(
        config,
        mode=mode,
        seed=seed,
        max_seconds=max_seconds,
        max_batches=max_batches,
        stop_after_first=stop_after_first,
    )
    result = Planner(scenario, cfg).run()
    stats = result.stats
    record = {
        "planner": mode,
        "seed": seed,
        "cost": result.cost,
        "first_solution_wall_s": stats.get("first_solution_wall_s"),
        "first_solution_cost": stats.get("first_solution_cost"),
        "first_solution_batch": stats.get("first_solution_batch"),
        "queue_pops": stats.get("queue_pops"),
        "propagations_evaluated": stats.get("propagations_evaluated"),
        "nodes_created": stats.get("nodes_created"),
        "vertices": stats.get("vertices"),
        "edges": stats.get("edges"),
        "batches": stats.get("batches"),
        "wall_s": stats.get("wall_s"),
        "times": [e["wall_s"] for e in result.anytime],
        "costs": [e["cost"] for e in result.anytime],
        "batch_trace": [e["batch"] for e in result.anytime],
    }
    return record, result


def _median(values):
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return f"{value:.12g}"
    return str(value)


def benchmark(scenario, config, seeds, planners, out_dir, max_seconds=None,
              max_batches=None, stop_after_first=False, checkpoints=12):
    """Run the full grid and write runs.csv, curves.csv, report.json, SVG."""
    os.makedirs(out_dir, exist_ok=True)
    records = []
    t_start = time.time()
    for mode in planners:
        for seed in seeds:
            rec, _ = run_single(
                scenario, config, mode, seed,
                max_seconds=max_seconds, max_batches=max_batches,
                stop_after_first=stop_after_first,
            )
            records.append(rec)
            log.info(
                "bench %s seed=%d cost=%.4f first=%.3fs wall=%.3fs",
                mode, seed,
                rec["cost"] if rec["cost"] is not None else float("inf"),
                rec["first_solution_wall_s"] or float("nan"),
                rec["wall_s"],
            )
    with open(os.path.join(out_dir, "runs.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUN_FIELDS)
        for rec in records:
            writer.writerow([_fmt(rec[k]) for k in RUN_FIELDS])
    with open(os.path.join(out_dir, "curves.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["planner", "seed", "wall_s", "batch", "cost"])
        for rec in records:
            for when, batch, cost in zip(rec["times"], rec["batch_trace"],
                                         rec["costs"]):
                writer.writerow(
                    [rec["planner"], rec["seed"], f"{when:.6f}", batch,
                     f"{cost:.12g}"]
                )
    horizon = max(
        (t for rec in records for t in rec["times"]), default=1.0
    )
    grid = [horizon * (i + 1) / checkpoints for i in range(checkpoints)]
    report = {"scenario": scenario.name, "planners": {}, "checkpoints": grid,
              "total_wall_s": time.time() - t_start}
    for mode in planners:
        runs = [r for r in records if r["planner"] == mode]
        med_curve = []
        for t in grid:
            vals = [step_cost_at(r["times"], r["costs"], t) for r in runs]
            med = float(np.median(vals))
            med_curve.append(None if math.isinf(med) else med)
        report["planners"][mode] = {
            "runs": len(runs),
            "solved": sum(1 for r in runs if math.isfinite(r["cost"])),
            "median_cost": _median(
                [r["cost"] for r in runs if math.isfinite(r["cost"])]
            ),
            "median_first_solution_wall_s": _median(
                [r["first_solution_wall_s"] for r in runs]
            ),
            "median_queue_pops": _median([r["queue_pops"] for r in runs]),
            "median_nodes_created": _median([r["nodes_created"] for r in runs]),
            "median_cost_at_checkpoints": med_curve,
        }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    render_cost_curves(
        [
            {"planner": r["planner"], "seed": r["seed"], "times": r["times"],
             "costs": r["costs"]}
            for r in records
        ],
        os.path.join(out_dir, "cost_vs_time.svg"),
        title=scenario.name,
    )
    return report
