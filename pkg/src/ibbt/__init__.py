"""Belief-space motion planning over batch nominal-trajectory graphs.

The package builds a random graph of steered nominal trajectories, runs an
LQG covariance recursion along its edges under position-dependent
measurement noise, rejects edges whose collision probability exceeds a
chance constraint, and searches the resulting belief tree. The informed
planner orders the search with nominal cost-to-go labels and stops each
pass at the first goal pop; the baseline exhausts the queue after every
added sample.
"""

__version__ = "0.1.0"

from .belief import (
    BeliefNode,
    Infeasible,
    dominates,
    edge_step_probabilities,
    kalman_step,
    propagate_edge,
)
from .dynamics import (
    DOUBLE_INTEGRATOR,
    DUBINS,
    Edge,
    LtvStep,
    ModelSpec,
    SteeringError,
    connect,
    linearize,
    lqr_gains,
    simulate_closed_loop,
)
from .environment import (
    ChanceConfig,
    ConvexPolygon,
    NoiseSpec,
    Scenario,
    collision_probability,
    measurement_noise_at,
    obstacle_free,
    sample_free,
)
from .graph import Graph, NearParams, Vertex, near, nearest, rrg_batch, value_iteration
from .planner import (
    BeliefQueue,
    Planner,
    PlannerConfig,
    PlanResult,
    plan,
    rrbt_plan,
)
from .scenario_io import ScenarioError, load_scenario, save_scenario

__all__ = [
    "BeliefNode", "BeliefQueue", "ChanceConfig", "ConvexPolygon",
    "DOUBLE_INTEGRATOR", "DUBINS", "Edge", "Graph", "Infeasible", "LtvStep",
    "ModelSpec", "NearParams", "NoiseSpec", "PlanResult", "Planner",
    "PlannerConfig", "Scenario", "ScenarioError", "SteeringError", "Vertex",
    "collision_probability", "connect", "dominates",
    "edge_step_probabilities", "kalman_step",
    "linearize", "load_scenario", "lqr_gains", "measurement_noise_at", "near",
    "nearest", "obstacle_free", "plan", "propagate_edge", "rrbt_plan",
    "rrg_batch", "sample_free", "save_scenario", "simulate_closed_loop",
    "value_iteration",
]
