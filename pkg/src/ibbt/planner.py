"""Anytime belief-tree search over a growing nominal-trajectory graph.

Two modes share one engine. The informed mode ("ibbt") adds samples in
batches, labels vertices with nominal cost-to-go by value iteration, and
expands belief nodes ordered by f = c + h, stopping each search pass at the
first goal pop. The baseline mode ("rrbt") adds one sample at a time, orders
purely by cost-to-come (all h = 0), and exhausts the queue every iteration.
"""

from dataclasses import dataclass, field, replace
import heapq
import logging
import time

import numpy as np

from .belief import BeliefNode, Infeasible, clamp_psd, propagate_edge
from .environment import ChanceConfig
from .graph import Graph, NearParams, rrg_batch, value_iteration

log = logging.getLogger("ibbt")

IBBT = "ibbt"
RRBT = "rrbt"


def _psd_within(diffs, eps):
    """Bool per stacked matrix: smallest eigenvalue >= -eps.

    A diagonal pre-test rejects most candidates without an eigenvalue
    factorization (any diagonal entry below -eps bounds the smallest
    eigenvalue below -eps).
    """
    ok = np.all(np.diagonal(diffs, axis1=-2, axis2=-1) >= -eps, axis=-1)
    if ok.any():
        w = np.linalg.eigvalsh(diffs[ok])
        ok[ok] = w[:, 0] >= -eps
    return ok


@dataclass
class PlannerConfig:
    """Knobs for a planning run; scenario files may override any of them."""

    mode: str = IBBT
    seed: int = 0
    batch_size: int = 20
    eps_dominance: float = 1e-6
    lambda_p: float = 0.1
    goal_bias: float = 0.05
    mc_samples: int = 1000
    check_stride: int = 1
    max_batches: int = None
    max_seconds: float = None
    stop_after_first: bool = False
    near_gamma: float = None
    near_rmax: float = None

    def __post_init__(self):
        if self.mode not in (IBBT, RRBT):
            raise ValueError(f"unknown planner mode {self.mode!r}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not (0.0 <= self.goal_bias < 1.0):
            raise ValueError("goal_bias must lie in [0, 1)")


@dataclass
class PathStep:
    """One link of a solution: the belief node and the edge that reached it."""

    vertex: int
    edge: int
    node: int
    parent: int
    c: float
    h: float
    P: np.ndarray
    P_tilde: np.ndarray


@dataclass
class PlanResult:
    """Outcome of a planning run."""

    cost: float
    path: list
    anytime: list
    stats: dict
    mode: str
    seed: int
    scenario_name: str
    graph: Graph = field(repr=False, default=None)
    tree: dict = field(repr=False, default=None)
    scenario: object = field(repr=False, default=None)

    @property
    def solved(self):
        return np.isfinite(self.cost)


class BeliefQueue:
    """Min-queue over belief nodes keyed by (f, c, id), with lazy deletion."""

    def __init__(self):
        self._heap = []
        self._keys = {}

    def __len__(self):
        return len(self._keys)

    def push(self, node):
        key = (node.f, node.c, node.id)
        if self._keys.get(node.id) == key:
            return
        self._keys[node.id] = key
        heapq.heappush(self._heap, key)

    def discard(self, node_id):
        self._keys.pop(node_id, None)

    def pop_best(self):
        """Pop the queued node id with the least (f, c, id); None when empty."""
        while self._heap:
            key = heapq.heappop(self._heap)
            node_id = key[2]
            if self._keys.get(node_id) == key:
                del self._keys[node_id]
                return node_id
        return None

    def prune(self, cost_bound):
        """Drop queued nodes with f strictly above the bound."""
        if not np.isfinite(cost_bound):
            return 0
        drop = [nid for nid, key in self._keys.items() if key[0] > cost_bound]
        for nid in drop:
            del self._keys[nid]
        return len(drop)

    def rebuild(self, nodes):
        """Re-key all queued entries after cost-to-go labels changed."""
        self._keys = {nid: (nodes[nid].f, nodes[nid].c, nid) for nid in self._keys}
        self._heap = list(self._keys.values())
        heapq.heapify(self._heap)


class Planner:
    """One planning run over a scenario; construct once, call run()."""

    def __init__(self, scenario, config, sampler=None, on_solution=None,
                 on_event=None):
        self.scenario = scenario
        self.cfg = config
        self.sampler = sampler
        self.on_solution = on_solution
        self.on_event = on_event
        self.model = scenario.model
        self.chance = ChanceConfig(
            delta=scenario.delta,
            mc_samples=config.mc_samples,
            check_stride=config.check_stride,
        )
        self.near_params = NearParams.for_scenario(
            scenario, gamma=config.near_gamma, r_max=config.near_rmax
        )
        self.graph = Graph(self.model)
        self.start_vid = self.graph.add_vertex(scenario.start_state).id
        self.goal_vid = self.graph.add_vertex(scenario.goal_state).id
        self.tree = {}
        self._next_node_id = 0
        root = BeliefNode(
            vertex=self.start_vid,
            P=clamp_psd(scenario.P0),
            P_tilde=clamp_psd(scenario.P_tilde0),
            c=0.0,
            h=0.0 if config.mode == RRBT else np.inf,
        )
        self.root_id = self._attach(root)
        self.queue = BeliefQueue()
        self.queue.push(root)
        self.cost = np.inf
        self.incumbent = None
        self._h_labels = None
        if config.mode == RRBT:
            for v in self.graph.vertices.values():
                v.h = 0.0
        self._sample_rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, 1])
        )
        self._prop_cache = {}
        self._aborted = False
        self.stats = {
            "queue_pops": 0,
            "propagations": 0,
            "propagations_evaluated": 0,
            "nodes_created": 1,
            "nodes_pruned": 0,
            "nodes_rejected": 0,
            "queue_pruned": 0,
            "batches": 0,
            "first_solution_batch": None,
            "first_solution_wall_s": None,
            "first_solution_cost": None,
        }

    # -- belief tree ---------------------------------------------------------

    def _attach(self, node):
        node.id = self._next_node_id
        self._next_node_id += 1
        self.tree[node.id] = node
        self.graph.vertices[node.vertex].node_ids.append(node.id)
        if node.parent is not None:
            self.tree[node.parent].children.add(node.id)
        return node.id

    def _remove_subtree(self, node_id):
        stack = [node_id]
        removed = 0
        top = self.tree[node_id]
        if top.parent is not None and top.parent in self.tree:
            self.tree[top.parent].children.discard(node_id)
        while stack:
            nid = stack.pop()
            node = self.tree.pop(nid)
            stack.extend(node.children)
            self.graph.vertices[node.vertex].node_ids.remove(nid)
            self.queue.discard(nid)
            removed += 1
        return removed

    def append_belief(self, n_new):
        """Insert a propagated belief unless an incumbent dominates it.

        On acceptance, incumbents it dominates are removed together with
        their subtrees and queue entries. A node never removes its own
        ancestors (their subtree contains the node itself); such ties arise
        at vertices whose cost-to-go is still infinite. Returns the node on
        acceptance, None on rejection.
        """
        v = self.graph.vertices[n_new.vertex]
        eps = self.cfg.eps_dominance
        dominated = []
        if v.node_ids:
            incumbents = [self.tree[nid] for nid in v.node_ids]
            f_arr = np.array([nd.c + nd.h for nd in incumbents])
            p_stack = np.stack([nd.P for nd in incumbents])
            pt_stack = np.stack([nd.P_tilde for nd in incumbents])
            f_new = n_new.f
            idx = np.flatnonzero(f_arr <= f_new + 1e-12)
            if idx.size:
                idx = idx[_psd_within(n_new.P - p_stack[idx], eps)]
            if idx.size:
                idx = idx[_psd_within(n_new.P_tilde - pt_stack[idx], eps)]
            if idx.size:
                self.stats["nodes_rejected"] += 1
                return None
            idx = np.flatnonzero(f_new <= f_arr + 1e-12)
            if idx.size:
                idx = idx[_psd_within(p_stack[idx] - n_new.P, eps)]
            if idx.size:
                idx = idx[_psd_within(pt_stack[idx] - n_new.P_tilde, eps)]
            if idx.size:
                ancestors = set()
                nid = n_new.parent
                while nid is not None:
                    ancestors.add(nid)
                    nid = self.tree[nid].parent
                dominated = [
                    nid for nid in (v.node_ids[i] for i in idx)
                    if nid not in ancestors
                ]
        self._attach(n_new)
        self.stats["nodes_created"] += 1
        for nid in dominated:
            # an earlier removal may have taken this node down with its subtree
            if nid in self.tree:
                self.stats["nodes_pruned"] += self._remove_subtree(nid)
        if self.incumbent is not None and self.incumbent not in self.tree:
            # the incumbent was just dominated; only a node at the same vertex
            # can do that, so n_new sits at the goal with no worse cost and
            # inherits the role
            self.incumbent = n_new.id
        self.queue.push(n_new)
        return n_new

    # -- propagation ---------------------------------------------------------

    def _rng_for(self, edge_id, node_id):
        return np.random.default_rng(
            np.random.SeedSequence([self.cfg.seed, 2, edge_id, node_id])
        )

    def _propagate(self, edge, node):
        """Deterministic propagation with memoization on (edge, source node)."""
        key = (edge.id, node.id)
        self.stats["propagations"] += 1
        hit = self._prop_cache.get(key)
        if hit is None:
            rng = self._rng_for(edge.id, node.id)
            res = propagate_edge(
                edge, node, self.scenario, self.chance, rng, self.cfg.lambda_p
            )
            self.stats["propagations_evaluated"] += 1
            if isinstance(res, Infeasible):
                self._prop_cache[key] = res
                return res
            self._prop_cache[key] = (res.P, res.P_tilde, res.c - node.c)
            return res
        if isinstance(hit, Infeasible):
            return hit
        p, p_tilde, dc = hit
        return BeliefNode(
            vertex=edge.to_vertex,
            P=p,
            P_tilde=p_tilde,
            c=node.c + dc,
            parent=node.id,
            in_edge=edge.id,
        )

    def _expand(self, node):
        for eid in self.graph.out_edges[node.vertex]:
            edge = self.graph.edges[eid]
            res = self._propagate(edge, node)
            if isinstance(res, Infeasible):
                continue
            res.h = self.graph.vertices[res.vertex].h
            self.append_belief(res)

    def graph_search(self, stop_at_goal, deadline=None):
        """Expand queued beliefs best-first; True when a goal belief pops.

        In goal-stopping mode the search returns as soon as the best queued
        node has infinite total cost: every remaining node then sits at a
        vertex with no nominal route to the goal, so no expansion in this
        pass can reach it. Those nodes stay queued and become expandable
        once a later batch makes their cost-to-go finite.
        """
        while True:
            if deadline is not None and time.perf_counter() > deadline:
                self._aborted = True
                return False
            nid = self.queue.pop_best()
            if nid is None:
                return False
            node = self.tree[nid]
            if stop_at_goal and not np.isfinite(node.f):
                self.queue.push(node)
                return False
            self.stats["queue_pops"] += 1
            if stop_at_goal and node.vertex == self.goal_vid:
                return True
            self._expand(node)

    # -- main loop ------------------------------------------------------------

    def _emit(self, batch, wall):
        goal_nodes = self.graph.vertices[self.goal_vid].node_ids
        if not goal_nodes:
            return
        best = min(goal_nodes, key=lambda nid: (self.tree[nid].c, nid))
        best_cost = self.tree[best].c
        if best_cost < self.cost:
            self.cost = best_cost
            self.incumbent = best
            entry = {"batch": batch, "cost": best_cost, "wall_s": wall}
            self.anytime.append(entry)
            if self.stats["first_solution_batch"] is None:
                self.stats["first_solution_batch"] = batch
                self.stats["first_solution_wall_s"] = wall
                self.stats["first_solution_cost"] = best_cost
            log.info(
                "solution improved: batch=%d cost=%.6f wall=%.3fs",
                batch, best_cost, wall,
            )
            if self.on_solution is not None:
                self.on_solution(self._snapshot(batch))

    def _snapshot(self, batch):
        path = self.solution_path(self.incumbent)
        pieces = [self.graph.vertices[path[0].vertex].state[:2][None, :]]
        for step in path[1:]:
            edge = self.graph.edges[step.edge]
            pts = edge.nominal_states[:, :2]
            pieces.append(pts[1:] if edge.n_steps > 0 else pts)
        return {
            "batch": batch,
            "cost": self.cost,
            "path": path,
            "solution_polyline": np.vstack(pieces),
            "solution_beliefs": [
                (self.graph.vertices[s.vertex].state[:2], s.P[:2, :2])
                for s in path
            ],
            "graph_polylines": [
                e.nominal_states[:, :2] for e in self.graph.edges.values()
            ],
            "tree_beliefs": [
                (
                    self.graph.vertices[n.vertex].state[:2],
                    n.P[:2, :2],
                )
                for n in self.tree.values()
            ],
        }

    def solution_path(self, node_id):
        """Chain of PathStep records from the root to the given belief."""
        steps = []
        nid = node_id
        while nid is not None:
            n = self.tree[nid]
            steps.append(
                PathStep(
                    vertex=n.vertex,
                    edge=n.in_edge,
                    node=n.id,
                    parent=n.parent,
                    c=n.c,
                    h=n.h,
                    P=np.array(n.P),
                    P_tilde=np.array(n.P_tilde),
                )
            )
            nid = n.parent
        steps.reverse()
        return steps

    def run(self):
        cfg = self.cfg
        informed = cfg.mode == IBBT
        max_batches = cfg.max_batches
        if max_batches is None and cfg.max_seconds is None:
            max_batches = 50
        t0 = time.perf_counter()
        deadline = None if cfg.max_seconds is None else t0 + cfg.max_seconds
        self.anytime = []
        batch = 0
        while True:
            batch += 1
            m = cfg.batch_size if informed else 1
            new_ids = rrg_batch(
                self.graph,
                self.scenario,
                m,
                self._sample_rng,
                self.near_params,
                sampler=self.sampler,
                goal_bias=cfg.goal_bias,
                goal_vertex=self.goal_vid,
            )
            if informed:
                self._h_labels = value_iteration(
                    self.graph, self.goal_vid, warm_start=self._h_labels
                )
                for node in self.tree.values():
                    node.h = self.graph.vertices[node.vertex].h
                self.queue.rebuild(self.tree)
            else:
                for vid in new_ids:
                    self.graph.vertices[vid].h = 0.0
            feed = set()
            for vid in new_ids:
                for eid in self.graph.in_edges[vid]:
                    feed.add(self.graph.edges[eid].from_vertex)
            for vid in sorted(feed):
                for nid in self.graph.vertices[vid].node_ids:
                    self.queue.push(self.tree[nid])
            if informed:
                self.stats["queue_pruned"] += self.queue.prune(self.cost)
                for nid in self.graph.vertices[self.goal_vid].node_ids:
                    self.queue.push(self.tree[nid])
            flag = self.graph_search(stop_at_goal=informed, deadline=deadline)
            if not informed:
                flag = bool(self.graph.vertices[self.goal_vid].node_ids)
            wall = time.perf_counter() - t0
            if flag:
                self._emit(batch, wall)
            self.stats["batches"] = batch
            if self.on_event is not None:
                self.on_event(
                    {
                        "batch": batch,
                        "wall_s": wall,
                        "cost": self.cost,
                        "vertices": self.graph.n_vertices,
                        "edges": self.graph.n_edges,
                        "tree_nodes": len(self.tree),
                        "queue": len(self.queue),
                    }
                )
            log.debug(
                "batch=%d wall=%.3fs vertices=%d edges=%d tree=%d queue=%d cost=%s",
                batch, wall, self.graph.n_vertices, self.graph.n_edges,
                len(self.tree), len(self.queue), self.cost,
            )
            if cfg.stop_after_first and np.isfinite(self.cost):
                break
            if max_batches is not None and batch >= max_batches:
                break
            if deadline is not None and time.perf_counter() >= deadline:
                break
            if self._aborted:
                break
        # a deadline abort can leave a better goal belief unreported
        self._emit(batch, time.perf_counter() - t0)
        self.stats["vertices"] = self.graph.n_vertices
        self.stats["edges"] = self.graph.n_edges
        self.stats["tree_nodes"] = len(self.tree)
        self.stats["wall_s"] = time.perf_counter() - t0
        self.stats["cost"] = self.cost
        path = self.solution_path(self.incumbent) if self.incumbent is not None else []
        return PlanResult(
            cost=self.cost,
            path=path,
            anytime=self.anytime,
            stats=dict(self.stats),
            mode=cfg.mode,
            seed=cfg.seed,
            scenario_name=self.scenario.name,
            graph=self.graph,
            tree=self.tree,
            scenario=self.scenario,
        )


def plan(scenario, config=None, **kw):
    """Run the informed planner on a scenario."""
    cfg = replace(config, mode=IBBT) if config else PlannerConfig(mode=IBBT)
    return Planner(scenario, cfg, **kw).run()


def rrbt_plan(scenario, config=None, **kw):
    """Run the baseline planner (single samples, cost-ordered, exhaustive)."""
    cfg = replace(config, mode=RRBT) if config else PlannerConfig(mode=RRBT)
    return Planner(scenario, cfg, **kw).run()
