"""Result files: deterministic JSON for runs and CSV for anytime traces.

The result JSON contains no wall-clock fields, so two runs with the same
scenario, seed, and batch budget produce byte-identical files. Timing lives
in the anytime CSV next to it. Floats are written at 12 significant digits;
infinities become the string "inf".
"""

import csv
import json
import math

import numpy as np

RESULT_SCHEMA = "ibbt-result-v1"

_DETERMINISTIC_STATS = (
    "queue_pops", "propagations", "propagations_evaluated", "nodes_created",
    "nodes_pruned", "nodes_rejected", "queue_pruned", "batches", "vertices",
    "edges", "tree_nodes", "first_solution_batch", "first_solution_cost",
)


def _num(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return float(f"{x:.12g}")


def _matrix(mat):
    return [[_num(v) for v in row] for row in np.asarray(mat, dtype=float)]


def solution_polyline(result):
    """Concatenated nominal positions along the solution, start to goal."""
    if not result.path or result.graph is None:
        return np.zeros((0, 2))
    pieces = [result.graph.vertices[result.path[0].vertex].state[:2][None, :]]
    for step in result.path[1:]:
        edge = result.graph.edges[step.edge]
        pts = edge.nominal_states[:, :2]
        pieces.append(pts[1:] if edge.n_steps > 0 else pts)
    return np.vstack(pieces)


def result_to_dict(result):
    """Serialize a PlanResult to the stable result schema."""
    steps = []
    for step in result.path:
        state = result.graph.vertices[step.vertex].state if result.graph else []
        steps.append(
            {
                "vertex": step.vertex,
                "edge": step.edge,
                "node": step.node,
                "parent": step.parent,
                "state": [_num(x) for x in state],
                "c": _num(step.c),
                "h": _num(step.h),
                "P": _matrix(step.P),
                "P_tilde": _matrix(step.P_tilde),
            }
        )
    stats = {}
    for key in _DETERMINISTIC_STATS:
        val = result.stats.get(key)
        if val is None:
            stats[key] = None
        elif isinstance(val, (int, np.integer)):
            stats[key] = int(val)
        else:
            stats[key] = _num(val)
    from .scenario_io import scenario_to_dict

    data = {
        "schema": RESULT_SCHEMA,
        "scenario": result.scenario_name,
        "planner": result.mode,
        "seed": result.seed,
        "cost": _num(result.cost),
        "solution": steps,
        "solution_polyline": [[_num(x), _num(y)] for x, y in solution_polyline(result)],
        "anytime": [
            {"batch": e["batch"], "cost": _num(e["cost"])} for e in result.anytime
        ],
        "stats": stats,
    }
    if result.scenario is not None:
        # embed the scenario so the render command is self-contained
        data["scenario_spec"] = scenario_to_dict(result.scenario)
    return data


def write_result_json(result, path):
    with open(path, "w") as fh:
        json.dump(result_to_dict(result), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_result(path):
    with open(path) as fh:
        return json.load(fh)


def write_anytime_csv(result, path):
    """Anytime trace with wall clock: one row per improved solution."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wall_s", "batch", "cost"])
        for entry in result.anytime:
            writer.writerow(
                [f"{entry['wall_s']:.6f}", entry["batch"], f"{entry['cost']:.12g}"]
            )
