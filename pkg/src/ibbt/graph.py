"""Nominal-trajectory graph: batch random construction and cost-to-go labels.

Vertices are sampled collision-free states; edges are steered nominal
trajectories kept only when every nominal state is obstacle-free. Each batch
adds m samples, wiring every new vertex to its nearest vertex and to all
vertices within a shrinking connection radius, in both directions.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import dynamics
from .environment import obstacle_free, sample_free
from .dynamics import DOUBLE_INTEGRATOR, SteeringError, connect, state_distance, wrap_angle

DUPLICATE_TOL = 1e-9


class Vertex:
    """A graph vertex: a state, its belief-node ids, and a cost-to-go label."""

    __slots__ = ("id", "state", "node_ids", "h")

    def __init__(self, vid, state):
        self.id = vid
        self.state = state
        self.node_ids = []
        self.h = np.inf

    def __repr__(self):
        return f"Vertex(id={self.id}, h={self.h})"


@dataclass
class NearParams:
    """Connection radius schedule r(n) = min(r_max, gamma (log n / n)^(1/2))."""

    gamma: float
    r_max: float

    @classmethod
    def for_scenario(cls, scenario, gamma=None, r_max=None):
        if gamma is None:
            gamma = 2.5 * math.sqrt(scenario.area / math.pi)
        if r_max is None:
            r_max = 0.25 * scenario.diagonal
        return cls(gamma=gamma, r_max=r_max)

    def radius(self, n):
        if n <= 1:
            return self.r_max
        return min(self.r_max, self.gamma * math.sqrt(math.log(n) / n))


class Graph:
    """Directed multigraph over sampled states (one edge per ordered pair)."""

    def __init__(self, model):
        self.model = model
        self.vertices = {}
        self.edges = {}
        self.out_edges = {}
        self.in_edges = {}
        self._pair = {}
        self._rows = []
        self._states_cache = None

    def add_vertex(self, state):
        vid = len(self.vertices)
        v = Vertex(vid, np.asarray(state, dtype=float))
        self.vertices[vid] = v
        self.out_edges[vid] = []
        self.in_edges[vid] = []
        self._rows.append(v.state)
        self._states_cache = None
        return v

    def add_edge(self, edge, from_id, to_id):
        """Insert a steered edge; an existing (from, to) edge wins."""
        if from_id == to_id:
            raise ValueError("self loops are not allowed")
        key = (from_id, to_id)
        if key in self._pair:
            return self.edges[self._pair[key]]
        edge.id = len(self.edges)
        edge.from_vertex = from_id
        edge.to_vertex = to_id
        self.edges[edge.id] = edge
        self.out_edges[from_id].append(edge.id)
        self.in_edges[to_id].append(edge.id)
        self._pair[key] = edge.id
        return edge

    def states_matrix(self):
        if self._states_cache is None:
            self._states_cache = np.vstack(self._rows) if self._rows else np.zeros(
                (0, self.model.n_x)
            )
        return self._states_cache

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    def dump_text(self):
        """Plain-text dump: V lines then E lines (format in the README)."""
        out = ["# ibbt graph dump v1"]
        for vid in sorted(self.vertices):
            v = self.vertices[vid]
            coords = " ".join(f"{x:.12g}" for x in v.state)
            out.append(f"V {vid} {v.h:.12g} {coords}")
        for eid in sorted(self.edges):
            e = self.edges[eid]
            out.append(
                f"E {eid} {e.from_vertex} {e.to_vertex} {e.nominal_cost:.12g} "
                f"{len(e.nominal_states)}"
            )
        return "\n".join(out) + "\n"


def nearest(graph, x, model=None):
    """Vertex id closest to x under the model metric (first id on ties)."""
    if graph.n_vertices == 0:
        raise ValueError("nearest on an empty graph")
    model = model or graph.model
    d = state_distance(model, graph.states_matrix(), x)
    return int(np.argmin(d))


def near(graph, x, params, model=None):
    """Ids of vertices within the schedule radius, excluding duplicates of x."""
    model = model or graph.model
    states = graph.states_matrix()
    if len(states) == 0:
        return []
    d = state_distance(model, states, x)
    r = params.radius(graph.n_vertices)
    dup = np.all(np.abs(states - np.asarray(x, dtype=float)) <= DUPLICATE_TOL, axis=1)
    return [int(i) for i in np.nonzero((d <= r) & ~dup)[0]]


def _try_edge(graph, scenario, from_id, to_id):
    """Steer between two vertices and keep the edge when obstacle-free."""
    if (from_id, to_id) in graph._pair:
        return graph.edges[graph._pair[(from_id, to_id)]]
    try:
        edge = connect(graph.model, graph.vertices[from_id].state,
                       graph.vertices[to_id].state)
    except SteeringError:
        return None
    if not obstacle_free(edge.nominal_states, scenario):
        return None
    return graph.add_edge(edge, from_id, to_id)


def _biased_goal_sample(scenario, rng, goal_state):
    pos = goal_state[:2]
    if scenario.model.kind == DOUBLE_INTEGRATOR:
        vlo, vhi = scenario.model.velocity_box
        vel = rng.uniform(vlo, vhi, size=2)
        return np.array([pos[0], pos[1], vel[0], vel[1]])
    th = float(wrap_angle(rng.uniform(-math.pi, math.pi)))
    return np.array([pos[0], pos[1], th])


def rrg_batch(graph, scenario, m, rng, params, sampler=None, goal_bias=0.0,
              goal_vertex=None):
    """Add up to m sampled vertices with nearest and radius connections.

    A sample is discarded when it duplicates an existing vertex (within
    1e-9) or when steering from its nearest vertex is blocked. With
    probability goal_bias the sample reuses the goal position with fresh
    non-position coordinates. Returns the list of new vertex ids.
    """
    if sampler is None:
        sampler = sample_free
    new_ids = []
    for _ in range(m):
        if goal_bias > 0.0 and goal_vertex is not None and rng.random() < goal_bias:
            x_rand = _biased_goal_sample(
                scenario, rng, graph.vertices[goal_vertex].state
            )
            if bool(scenario.positions_in_collision(x_rand[:2])[0]):
                continue
        else:
            x_rand = sampler(scenario, rng)
        states = graph.states_matrix()
        if bool(
            np.any(np.all(np.abs(states - x_rand) <= DUPLICATE_TOL, axis=1))
        ):
            continue
        v_nearest = nearest(graph, x_rand)
        try:
            edge_in = connect(graph.model, graph.vertices[v_nearest].state, x_rand)
        except SteeringError:
            continue
        if not obstacle_free(edge_in.nominal_states, scenario):
            continue
        near_ids = near(graph, x_rand, params)
        v_new = graph.add_vertex(x_rand)
        graph.add_edge(edge_in, v_nearest, v_new.id)
        _try_edge(graph, scenario, v_new.id, v_nearest)
        for v_near in near_ids:
            if v_near == v_nearest:
                continue
            _try_edge(graph, scenario, v_near, v_new.id)
            _try_edge(graph, scenario, v_new.id, v_near)
        new_ids.append(v_new.id)
    return new_ids


def value_iteration(graph, goal_id, warm_start=None):
    """Cost-to-go of the nominal shortest path to the goal, per vertex.

    Gauss-Seidel sweeps over vertex ids until a full sweep changes nothing.
    warm_start maps vertex ids to previous labels; missing or new vertices
    start at infinity. Labels are written back to vertex.h and returned.
    """
    h = {vid: np.inf for vid in graph.vertices}
    if warm_start:
        for vid, val in warm_start.items():
            if vid in h:
                h[vid] = val
    h[goal_id] = 0.0
    order = sorted(graph.vertices)
    for _ in range(2 * len(order) + 10):
        changed = False
        for vid in order:
            if vid == goal_id:
                continue
            best = np.inf
            for eid in graph.out_edges[vid]:
                e = graph.edges[eid]
                cand = e.nominal_cost + h[e.to_vertex]
                if cand < best:
                    best = cand
            if best != h[vid]:
                h[vid] = best
                changed = True
        if not changed:
            break
    else:
        raise RuntimeError("value iteration failed to converge")
    for vid, val in h.items():
        graph.vertices[vid].h = val
    return h
