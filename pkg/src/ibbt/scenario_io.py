"""Scenario files: JSON schema, validation, and round-trip serialization.

A scenario file has top-level sections "model", "workspace", "noise",
"start", "goal", plus "delta", an optional "name", and an optional
"planner" section holding PlannerConfig overrides. Matrix-valued entries
accept a scalar (multiple of identity), a list (diagonal), or a list of
lists (full matrix).
"""

import json
import math
from importlib import resources

import numpy as np

from .dynamics import DOUBLE_INTEGRATOR, DUBINS, ModelSpec
from .environment import ConvexPolygon, NoiseSpec, Scenario
from .planner import PlannerConfig


class ScenarioError(ValueError):
    """Scenario file rejected; the message lists every violation found."""


_MODEL_KEYS = {
    "kind", "dt", "process_noise", "lqr_Q", "lqr_R", "turn_radius",
    "steering_speed_scale", "control_effort_weight", "velocity_box",
}
_TOP_KEYS = {"name", "model", "workspace", "noise", "start", "goal", "delta",
             "planner"}
_WORKSPACE_KEYS = {"bounds", "obstacles", "info_regions"}
_START_KEYS = {"state", "P0", "P_tilde0"}
_GOAL_KEYS = {"state"}
_NOISE_KEYS = {"D_default", "D_info"}
_PLANNER_KEYS = {
    "mode", "seed", "batch_size", "eps_dominance", "lambda_p", "goal_bias",
    "mc_samples", "check_stride", "max_batches", "max_seconds",
    "stop_after_first", "near_gamma", "near_rmax",
}


def _as_matrix(value, n, label, errors):
    try:
        if np.isscalar(value):
            return float(value) * np.eye(n)
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        errors.append(f"{label}: cannot interpret as a matrix")
        return np.eye(n)
    if arr.ndim == 1:
        if arr.shape != (n,):
            errors.append(f"{label}: diagonal needs {n} entries, got {arr.shape[0]}")
            return np.eye(n)
        return np.diag(arr)
    if arr.shape != (n, n):
        errors.append(f"{label}: expected a {n}x{n} matrix, got {arr.shape}")
        return np.eye(n)
    return arr


def _check_keys(section, allowed, label, errors):
    for key in section:
        if key not in allowed:
            errors.append(f"{label}.{key}: unknown key")


def _parse_polygons(items, label, errors):
    out = []
    for i, item in enumerate(items):
        try:
            if isinstance(item, dict) and "rect" in item:
                out.append(ConvexPolygon.rect(*[float(v) for v in item["rect"]]))
            elif isinstance(item, dict) and "polygon" in item:
                out.append(ConvexPolygon(item["polygon"]))
            else:
                errors.append(f"{label}[{i}]: need a 'rect' or 'polygon' entry")
        except (TypeError, ValueError) as exc:
            errors.append(f"{label}[{i}]: {exc}")
    return out


def scenario_from_dict(data, path="scenario"):
    """Build (Scenario, PlannerConfig) from a parsed JSON object.

    Raises ScenarioError listing every violation found, not just the first.
    """
    errors = []
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: top level must be an object")
    _check_keys(data, _TOP_KEYS, path, errors)
    for req in ("model", "workspace", "noise", "start", "goal", "delta"):
        if req not in data:
            errors.append(f"{path}.{req}: missing required section")
    if errors:
        raise ScenarioError("; ".join(errors))

    mdata = dict(data["model"])
    _check_keys(mdata, _MODEL_KEYS, f"{path}.model", errors)
    kind = mdata.get("kind")
    if kind not in (DOUBLE_INTEGRATOR, DUBINS):
        errors.append(
            f"{path}.model.kind: must be '{DOUBLE_INTEGRATOR}' or '{DUBINS}'"
        )
        raise ScenarioError("; ".join(errors))
    n_x = 4 if kind == DOUBLE_INTEGRATOR else 3
    kw = {}
    if "dt" in mdata:
        kw["dt"] = float(mdata["dt"])
    if "process_noise" in mdata:
        kw["process_noise_G"] = _as_matrix(
            mdata["process_noise"], n_x, f"{path}.model.process_noise", errors
        )
    if "lqr_Q" in mdata:
        kw["lqr_Q"] = _as_matrix(mdata["lqr_Q"], n_x, f"{path}.model.lqr_Q", errors)
    if "lqr_R" in mdata:
        n_u = 2 if kind == DOUBLE_INTEGRATOR else 1
        kw["lqr_R"] = _as_matrix(mdata["lqr_R"], n_u, f"{path}.model.lqr_R", errors)
    for scalar_key in ("steering_speed_scale", "control_effort_weight"):
        if scalar_key in mdata:
            kw[scalar_key] = float(mdata[scalar_key])
    if "velocity_box" in mdata:
        box = mdata["velocity_box"]
        if len(box) != 2 or not box[0] < box[1]:
            errors.append(f"{path}.model.velocity_box: need [lo, hi] with lo < hi")
        else:
            kw["velocity_box"] = (float(box[0]), float(box[1]))
    try:
        if kind == DOUBLE_INTEGRATOR:
            model = ModelSpec.double_integrator(**kw)
        else:
            if "turn_radius" in mdata:
                kw["turn_radius"] = float(mdata["turn_radius"])
            model = ModelSpec.dubins(**kw)
    except ValueError as exc:
        errors.append(f"{path}.model: {exc}")
        raise ScenarioError("; ".join(errors))

    wdata = dict(data["workspace"])
    _check_keys(wdata, _WORKSPACE_KEYS, f"{path}.workspace", errors)
    bounds = np.asarray(wdata.get("bounds", [0, 0, 1, 1]), dtype=float)
    if bounds.shape != (4,) or not (bounds[2] > bounds[0] and bounds[3] > bounds[1]):
        errors.append(f"{path}.workspace.bounds: need [xmin, ymin, xmax, ymax]")
        bounds = np.array([0.0, 0.0, 1.0, 1.0])
    obstacles = _parse_polygons(
        wdata.get("obstacles", []), f"{path}.workspace.obstacles", errors
    )
    info_regions = _parse_polygons(
        wdata.get("info_regions", []), f"{path}.workspace.info_regions", errors
    )

    ndata = dict(data["noise"])
    _check_keys(ndata, _NOISE_KEYS, f"{path}.noise", errors)
    d_default = _as_matrix(
        ndata.get("D_default", 1.0), n_x, f"{path}.noise.D_default", errors
    )
    d_info = _as_matrix(ndata.get("D_info", 0.01), n_x, f"{path}.noise.D_info", errors)
    try:
        noise = NoiseSpec(D_info=d_info, D_default=d_default)
    except ValueError as exc:
        errors.append(f"{path}.noise: {exc}")
        noise = NoiseSpec(D_info=np.eye(n_x), D_default=np.eye(n_x))

    sdata = dict(data["start"])
    _check_keys(sdata, _START_KEYS, f"{path}.start", errors)
    gdata = dict(data["goal"])
    _check_keys(gdata, _GOAL_KEYS, f"{path}.goal", errors)
    start = np.asarray(sdata.get("state", np.zeros(n_x)), dtype=float)
    goal = np.asarray(gdata.get("state", np.zeros(n_x)), dtype=float)
    for label, state in ((f"{path}.start.state", start), (f"{path}.goal.state", goal)):
        if state.shape != (n_x,):
            errors.append(f"{label}: need {n_x} entries")
    p0 = _as_matrix(sdata.get("P0", 0.0), n_x, f"{path}.start.P0", errors)
    pt0 = _as_matrix(sdata.get("P_tilde0", 0.0), n_x, f"{path}.start.P_tilde0", errors)
    for label, mat in ((f"{path}.start.P0", p0), (f"{path}.start.P_tilde0", pt0)):
        if np.min(np.linalg.eigvalsh(0.5 * (mat + mat.T))) < -1e-9:
            errors.append(f"{label}: must be positive semidefinite")
    if np.min(np.linalg.eigvalsh(0.5 * ((p0 - pt0) + (p0 - pt0).T))) < -1e-9:
        errors.append(f"{path}.start: P0 - P_tilde0 must be positive semidefinite")

    delta = float(data["delta"])
    if not (0.0 < delta < 1.0):
        errors.append(f"{path}.delta: must lie strictly between 0 and 1")

    scenario = Scenario(
        bounds=bounds,
        obstacles=obstacles,
        info_regions=info_regions,
        start_state=start,
        goal_state=goal,
        P0=p0,
        P_tilde0=pt0,
        delta=delta,
        model=model,
        noise=noise,
        name=str(data.get("name", "scenario")),
    )
    if start.shape == (n_x,) and goal.shape == (n_x,):
        for label, state in ((f"{path}.start.state", start),
                             (f"{path}.goal.state", goal)):
            if bool(scenario.positions_in_collision(state[:2])[0]):
                for i, obs in enumerate(obstacles):
                    if bool(obs.contains(state[:2])[0]):
                        errors.append(f"{label}: position inside obstacle {i}")
                        break
                else:
                    errors.append(f"{label}: position outside workspace bounds")

    pdata = dict(data.get("planner", {}))
    _check_keys(pdata, _PLANNER_KEYS, f"{path}.planner", errors)
    try:
        config = PlannerConfig(**{k: pdata[k] for k in pdata if k in _PLANNER_KEYS})
    except (TypeError, ValueError) as exc:
        config = PlannerConfig()
        errors.append(f"{path}.planner: {exc}")

    if errors:
        raise ScenarioError("; ".join(errors))
    return scenario, config


def load_scenario(path):
    """Load a scenario file; returns (Scenario, PlannerConfig)."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}, "
                                f"column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(data, path=str(path))


def _matrix_to_json(mat):
    return [[float(x) for x in row] for row in np.asarray(mat, dtype=float)]


def scenario_to_dict(scenario, config=None):
    """Serialize back to the file schema (matrices in full form)."""
    model = scenario.model
    mdata = {
        "kind": model.kind,
        "dt": model.dt,
        "process_noise": _matrix_to_json(model.process_noise_G),
        "lqr_Q": _matrix_to_json(model.lqr_Q),
        "lqr_R": _matrix_to_json(model.lqr_R),
        "steering_speed_scale": model.steering_speed_scale,
        "control_effort_weight": model.control_effort_weight,
    }
    if model.kind == DOUBLE_INTEGRATOR:
        mdata["velocity_box"] = list(model.velocity_box)
    else:
        mdata["turn_radius"] = model.turn_radius
    data = {
        "name": scenario.name,
        "model": mdata,
        "workspace": {
            "bounds": [float(b) for b in scenario.bounds],
            "obstacles": [
                {"polygon": _matrix_to_json(o.vertices)} for o in scenario.obstacles
            ],
            "info_regions": [
                {"polygon": _matrix_to_json(r.vertices)} for r in scenario.info_regions
            ],
        },
        "noise": {
            "D_default": _matrix_to_json(scenario.noise.D_default),
            "D_info": _matrix_to_json(scenario.noise.D_info),
        },
        "start": {
            "state": [float(x) for x in scenario.start_state],
            "P0": _matrix_to_json(scenario.P0),
            "P_tilde0": _matrix_to_json(scenario.P_tilde0),
        },
        "goal": {"state": [float(x) for x in scenario.goal_state]},
        "delta": scenario.delta,
    }
    if config is not None:
        pdata = {
            "mode": config.mode,
            "seed": config.seed,
            "batch_size": config.batch_size,
            "eps_dominance": config.eps_dominance,
            "lambda_p": config.lambda_p,
            "goal_bias": config.goal_bias,
            "mc_samples": config.mc_samples,
            "check_stride": config.check_stride,
            "stop_after_first": config.stop_after_first,
        }
        for key in ("max_batches", "max_seconds", "near_gamma", "near_rmax"):
            val = getattr(config, key)
            if val is not None:
                pdata[key] = val
        data["planner"] = pdata
    return data


def save_scenario(scenario, path, config=None):
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario, config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def builtin_scenario_names():
    """Names of scenario files shipped with the package."""
    root = resources.files("ibbt") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario(path_or_name):
    """Accept a filesystem path or the name of a shipped scenario."""
    import os

    if os.path.exists(path_or_name):
        return str(path_or_name)
    root = resources.files("ibbt") / "scenarios"
    candidate = root / f"{path_or_name}.json"
    if candidate.is_file():
        return str(candidate)
    names = ", ".join(builtin_scenario_names())
    raise ScenarioError(
        f"scenario {path_or_name!r} is neither a file nor a shipped scenario "
        f"(available: {names})"
    )
