"""Scene and benchmark figures rendered to SVG files.

Output is deterministic: a fixed hash salt and no date metadata, so the
same inputs produce byte-identical SVG bytes.
"""

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import LineCollection
from matplotlib.patches import Ellipse, Polygon as MplPolygon

# scales a covariance standard deviation to the 95% confidence radius in 2D
CONF95_RADIUS = 2.447746830680816

_SVG_RC = {"svg.hashsalt": "ibbt"}


def ellipse_params(cov2):
    """(width, height, angle_deg) of the 95% confidence ellipse of a 2x2 cov."""
    c = 0.5 * (np.asarray(cov2, dtype=float) + np.asarray(cov2, dtype=float).T)
    w, v = np.linalg.eigh(c)
    w = np.clip(w, 0.0, None)
    angle = math.degrees(math.atan2(v[1, 1], v[0, 1]))
    return (
        2.0 * CONF95_RADIUS * math.sqrt(w[1]),
        2.0 * CONF95_RADIUS * math.sqrt(w[0]),
        angle,
    )


def _draw_environment(ax, scenario):
    xmin, ymin, xmax, ymax = scenario.bounds
    ax.set_xlim(xmin - 0.02 * (xmax - xmin), xmax + 0.02 * (xmax - xmin))
    ax.set_ylim(ymin - 0.02 * (ymax - ymin), ymax + 0.02 * (ymax - ymin))
    ax.add_patch(
        MplPolygon(
            [[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]],
            closed=True, fill=False, edgecolor="black", linewidth=1.2,
        )
    )
    for region in scenario.info_regions:
        ax.add_patch(
            MplPolygon(region.vertices, closed=True, facecolor="#cfe8ff",
                       edgecolor="#7fb2e5", linewidth=0.8)
        )
    for obs in scenario.obstacles:
        ax.add_patch(
            MplPolygon(obs.vertices, closed=True, facecolor="#666666",
                       edgecolor="#333333", linewidth=0.8)
        )
    ax.plot(*scenario.start_state[:2], marker="o", color="#2a7f2a", markersize=7,
            zorder=6)
    ax.plot(*scenario.goal_state[:2], marker="*", color="#b03030", markersize=12,
            zorder=6)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")


def _save(fig, path):
    with plt.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_scene(scenario, path, graph_polylines=None, tree_beliefs=None,
                 solution_polyline=None, solution_beliefs=None, rollouts=None,
                 title=None):
    """Render the workspace plus optional graph, beliefs, and solution.

    graph_polylines: iterable of (k, 2) position arrays (edge nominals).
    tree_beliefs / solution_beliefs: iterables of (position, 2x2 covariance).
    solution_polyline: (k, 2) positions of the executed nominal path.
    rollouts: iterable of (k, 2) simulated position traces.
    """
    fig, ax = plt.subplots(figsize=(7.2, 5.4))
    _draw_environment(ax, scenario)
    if graph_polylines:
        ax.add_collection(
            LineCollection(graph_polylines, colors="#b5b5b5", linewidths=0.5,
                           alpha=0.7, zorder=1)
        )
    for pos, cov in tree_beliefs or ():
        w, h, ang = ellipse_params(cov)
        ax.add_patch(
            Ellipse(pos, w, h, angle=ang, fill=False, edgecolor="#4878b0",
                    linewidth=0.7, alpha=0.8, zorder=3)
        )
    if rollouts:
        ax.add_collection(
            LineCollection(rollouts, colors="#d9a441", linewidths=0.6, alpha=0.6,
                           zorder=4)
        )
    if solution_polyline is not None and len(solution_polyline):
        pts = np.asarray(solution_polyline)
        ax.plot(pts[:, 0], pts[:, 1], color="#b03030", linewidth=2.0, zorder=5)
    for pos, cov in solution_beliefs or ():
        w, h, ang = ellipse_params(cov)
        ax.add_patch(
            Ellipse(pos, w, h, angle=ang, fill=False, edgecolor="#b03030",
                    linewidth=1.2, zorder=5)
        )
    if title:
        ax.set_title(title)
    _save(fig, path)


def step_cost_at(times, costs, t):
    """Cost of an anytime trace at wall time t (inf before first entry)."""
    value = math.inf
    for when, cost in zip(times, costs):
        if when <= t:
            value = cost
        else:
            break
    return value


def render_cost_curves(curves, path, title=None):
    """Cost-vs-time step plot; one faint line per run, bold medians.

    curves: list of dicts with keys planner, seed, times, costs.
    """
    fig, ax = plt.subplots(figsize=(7.2, 4.6))
    colors = {"ibbt": "#b03030", "rrbt": "#4878b0"}
    t_max = 0.0
    for c in curves:
        if c["times"]:
            t_max = max(t_max, max(c["times"]))
    t_max = t_max or 1.0
    grid = np.linspace(0.0, t_max, 200)
    by_planner = {}
    for c in curves:
        by_planner.setdefault(c["planner"], []).append(c)
        if c["times"]:
            ts = list(c["times"]) + [t_max]
            cs = list(c["costs"]) + [c["costs"][-1]]
            ax.step(ts, cs, where="post", color=colors.get(c["planner"], "gray"),
                    alpha=0.25, linewidth=0.7)
    for planner, runs in sorted(by_planner.items()):
        med = []
        for t in grid:
            vals = [step_cost_at(r["times"], r["costs"], t) for r in runs]
            med.append(float(np.median(vals)))
        finite = [(t, m) for t, m in zip(grid, med) if math.isfinite(m)]
        if finite:
            ts, ms = zip(*finite)
            ax.plot(ts, ms, color=colors.get(planner, "gray"), linewidth=2.2,
                    label=f"{planner} median")
    ax.set_xlabel("wall time [s]")
    ax.set_ylabel("solution cost")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right")
    _save(fig, path)


def solution_payload(result_dict):
    """Polyline and belief ellipses from a loaded result JSON."""
    polyline = np.asarray(result_dict.get("solution_polyline", []), dtype=float)
    beliefs = []
    for step in result_dict.get("solution", []):
        state = step.get("state") or []
        if len(state) >= 2:
            beliefs.append(
                (np.asarray(state[:2], dtype=float),
                 np.asarray(step["P"], dtype=float)[:2, :2])
            )
    return polyline, beliefs
