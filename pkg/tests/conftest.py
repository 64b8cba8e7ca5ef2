"""Shared scenario builders and helpers for the test suite."""

import json

import numpy as np
import pytest

from ibbt.dynamics import ModelSpec
from ibbt.environment import ConvexPolygon, NoiseSpec, Scenario


def make_open_scenario(name="open-di"):
    """Obstacle-free double-integrator world that solves in a second or two.

    An information strip sits between start and goal; the direct edge is
    feasible from the root, so planners succeed as soon as the goal gains
    an incoming edge.
    """
    model = ModelSpec.double_integrator(dt=0.1, steering_speed_scale=0.5)
    return Scenario(
        bounds=[0.0, 0.0, 8.0, 5.0],
        obstacles=[],
        info_regions=[ConvexPolygon.rect(3.0, 0.0, 5.0, 5.0)],
        start_state=[1.0, 2.5, 0.0, 0.0],
        goal_state=[7.0, 2.5, 0.0, 0.0],
        P0=np.diag([0.05, 0.05, 0.01, 0.01]),
        P_tilde0=np.diag([0.05, 0.05, 0.01, 0.01]),
        delta=0.1,
        model=model,
        noise=NoiseSpec(D_info=0.01 * np.eye(4), D_default=np.eye(4)),
        name=name,
    )


def make_walled_goal_scenario(name="walled-goal"):
    """Goal sealed inside a box of obstacles; no solution exists."""
    model = ModelSpec.double_integrator(dt=0.1, steering_speed_scale=0.5)
    return Scenario(
        bounds=[0.0, 0.0, 8.0, 5.0],
        obstacles=[
            ConvexPolygon.rect(5.8, 1.6, 7.4, 1.9),
            ConvexPolygon.rect(5.8, 3.1, 7.4, 3.4),
            ConvexPolygon.rect(5.8, 1.9, 6.1, 3.1),
            ConvexPolygon.rect(7.1, 1.9, 7.4, 3.1),
        ],
        info_regions=[],
        start_state=[1.0, 2.5, 0.0, 0.0],
        goal_state=[6.6, 2.5, 0.0, 0.0],
        P0=np.diag([0.05, 0.05, 0.01, 0.01]),
        P_tilde0=np.diag([0.05, 0.05, 0.01, 0.01]),
        delta=0.1,
        model=model,
        noise=NoiseSpec(D_info=0.01 * np.eye(4), D_default=np.eye(4)),
        name=name,
    )


OPEN_SCENARIO_JSON = {
    "name": "open-di",
    "model": {
        "kind": "double_integrator",
        "dt": 0.1,
        "steering_speed_scale": 0.5,
    },
    "workspace": {
        "bounds": [0.0, 0.0, 8.0, 5.0],
        "obstacles": [],
        "info_regions": [{"rect": [3.0, 0.0, 5.0, 5.0]}],
    },
    "noise": {"D_info": 0.01, "D_default": 1.0},
    "start": {
        "state": [1.0, 2.5, 0.0, 0.0],
        "P0": [0.05, 0.05, 0.01, 0.01],
        "P_tilde0": [0.05, 0.05, 0.01, 0.01],
    },
    "goal": {"state": [7.0, 2.5, 0.0, 0.0]},
    "delta": 0.1,
    "planner": {
        "mode": "ibbt",
        "seed": 0,
        "batch_size": 10,
        "goal_bias": 0.2,
        "mc_samples": 300,
        "eps_dominance": 0.001,
    },
}

WALLED_SCENARIO_JSON = {
    "name": "walled-goal",
    "model": {
        "kind": "double_integrator",
        "dt": 0.1,
        "steering_speed_scale": 0.5,
    },
    "workspace": {
        "bounds": [0.0, 0.0, 8.0, 5.0],
        "obstacles": [
            {"rect": [5.8, 1.6, 7.4, 1.9]},
            {"rect": [5.8, 3.1, 7.4, 3.4]},
            {"rect": [5.8, 1.9, 6.1, 3.1]},
            {"rect": [7.1, 1.9, 7.4, 3.1]},
        ],
        "info_regions": [],
    },
    "noise": {"D_info": 0.01, "D_default": 1.0},
    "start": {
        "state": [1.0, 2.5, 0.0, 0.0],
        "P0": [0.05, 0.05, 0.01, 0.01],
        "P_tilde0": [0.05, 0.05, 0.01, 0.01],
    },
    "goal": {"state": [6.6, 2.5, 0.0, 0.0]},
    "delta": 0.1,
    "planner": {
        "mode": "ibbt",
        "seed": 0,
        "batch_size": 10,
        "goal_bias": 0.2,
        "mc_samples": 300,
        "eps_dominance": 0.001,
    },
}


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
    return str(path)


@pytest.fixture()
def open_scenario():
    return make_open_scenario()


@pytest.fixture()
def walled_scenario():
    return make_walled_goal_scenario()


@pytest.fixture()
def open_scenario_file(tmp_path):
    return write_json(tmp_path / "open.json", OPEN_SCENARIO_JSON)


@pytest.fixture()
def walled_scenario_file(tmp_path):
    return write_json(tmp_path / "walled.json", WALLED_SCENARIO_JSON)


def random_psd(rng, n, scale=1.0):
    m = rng.standard_normal((n, n))
    return scale * (m @ m.T) / n + 1e-6 * np.eye(n)
