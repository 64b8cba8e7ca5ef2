"""Acceptance gate: ten end-to-end checks with stated tolerances.

Each test prints one "criterion N PASS/FAIL" line (visible with pytest -s)
and asserts both the quantitative claim and its runtime budget. The checks
are self-contained: every expected value comes from an oracle computed in
this file or from first principles, never from the code under test.
"""

import heapq
import json
import math
import time
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from ibbt.belief import BeliefNode, Infeasible, edge_step_probabilities, \
    kalman_step, propagate_edge
from ibbt.bench import run_single
from ibbt.cli import main as cli_main
from ibbt.dynamics import Edge, LtvStep, ModelSpec, connect, dubins_shortest, \
    simulate_closed_loop
from ibbt.environment import ChanceConfig, sample_free
from ibbt.graph import Graph, value_iteration
from ibbt.planner import Planner, PlannerConfig
from ibbt.render import step_cost_at
from ibbt.results import solution_polyline
from ibbt.scenario_io import load_scenario, resolve_scenario

from conftest import make_open_scenario, random_psd
from dubins_oracle import dubins_oracle


def _verdict(num, ok, detail):
    print(f"criterion {num} {'PASS' if ok else 'FAIL'}: {detail}")
    return ok


def _sqrtm_psd(mat):
    w, v = np.linalg.eigh(mat)
    w = np.clip(w, 0.0, None)
    return v @ np.diag(np.sqrt(w)) @ v.T


# -- criterion 1: factored covariance recursion equals joint moments ---------


def _joint_step(a, b, g, c, d, k, l_gain, sigma):
    """Stacked covariance recursion for (true error, estimated error)."""
    n = a.shape[0]
    bk = b @ k
    lca = l_gain @ c @ a
    m = np.block([
        [a, bk],
        [lca, (np.eye(n) - l_gain @ c) @ (a + bk) + l_gain @ c @ bk],
    ])
    noise = np.block([
        [g, np.zeros((n, d.shape[1]))],
        [l_gain @ c @ g, l_gain @ d],
    ])
    return m @ sigma @ m.T + noise @ noise.T


def test_criterion_01_covariance_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1001)
    worst_split = 0.0
    worst_joint = 0.0
    min_eig = np.inf
    for dim in (3, 4):
        for _ in range(1000):
            a = np.eye(dim) + 0.1 * rng.standard_normal((dim, dim))
            b = rng.standard_normal((dim, 2))
            g = 0.3 * rng.standard_normal((dim, dim))
            c = np.eye(dim)
            d = 0.5 * rng.standard_normal((dim, dim)) + 1.5 * np.eye(dim)
            k = -0.2 * rng.standard_normal((2, dim))
            p_hat = random_psd(rng, dim)
            p_tilde = random_psd(rng, dim)
            step = LtvStep(A=a, B=b, G=g, C=c, dt=0.1)
            res = kalman_step(step, k, p_hat, p_tilde, d=d)
            sigma = np.block([
                [p_hat + p_tilde, p_hat],
                [p_hat, p_hat],
            ])
            sigma = _joint_step(a, b, g, c, d, k, res.L, sigma)
            worst_split = max(
                worst_split,
                np.linalg.norm(res.P - (res.P_hat + res.P_tilde)),
            )
            worst_joint = max(
                worst_joint, np.linalg.norm(res.P - sigma[:dim, :dim])
            )
            min_eig = min(
                min_eig,
                np.min(np.linalg.eigvalsh(res.P_hat)),
                np.min(np.linalg.eigvalsh(res.P_tilde)),
            )
    elapsed = time.perf_counter() - t0
    ok = worst_split < 1e-9 and worst_joint < 1e-9 and min_eig >= -1e-9 \
        and elapsed < 5.0
    detail = (f"2000 random systems (dims 3, 4): max |P-(Phat+Ptilde)| "
              f"{worst_split:.2e}, max |P-joint| {worst_joint:.2e}, "
              f"min eigenvalue {min_eig:.2e}, {elapsed:.1f}s (< 5s)")
    assert _verdict(1, ok, detail), detail


# -- criterion 2: predicted covariances match closed-loop rollouts -----------


def test_criterion_02_rollout_covariances():
    t0 = time.perf_counter()
    scenario = make_open_scenario()
    model = scenario.model
    edge = connect(model, [1.0, 2.5, 0.0, 0.0], [5.0, 2.5, 0.0, 0.0])
    assert edge.n_steps == 20
    info_mask = scenario.positions_in_info_region(edge.nominal_states[1:, :2])
    p_hat = np.array(scenario.P0) - np.array(scenario.P_tilde0)
    p_tilde = np.array(scenario.P_tilde0)
    predicted = []
    for k in range(edge.n_steps):
        d = scenario.noise.D_info if info_mask[k] else scenario.noise.D_default
        res = kalman_step(edge.ltv_steps[k], edge.gains[k], p_hat, p_tilde, d=d)
        predicted.append(res.P)
        p_hat, p_tilde = res.P_hat, res.P_tilde

    n_roll = 10000
    rng = np.random.default_rng(777)
    s_hat = _sqrtm_psd(np.array(scenario.P0) - np.array(scenario.P_tilde0))
    s_tilde = _sqrtm_psd(np.array(scenario.P_tilde0))
    nominal = edge.nominal_states
    second_moment = np.zeros((edge.n_steps, 4, 4))
    for _ in range(n_roll):
        est0 = s_hat @ rng.standard_normal(4)
        err0 = est0 + s_tilde @ rng.standard_normal(4)
        truth, _ = simulate_closed_loop(
            model, edge, scenario, nominal[0] + err0, est0, rng,
            scenario.P_tilde0,
        )
        err = truth[1:] - nominal[1:]
        second_moment += err[:, :, None] * err[:, None, :]
    second_moment /= n_roll
    rel = [
        np.linalg.norm(second_moment[k] - predicted[k])
        / np.linalg.norm(predicted[k])
        for k in range(edge.n_steps)
    ]
    elapsed = time.perf_counter() - t0
    ok = max(rel) < 0.10 and elapsed < 30.0
    detail = (f"20-step edge, {n_roll} rollouts: max relative Frobenius "
              f"error {max(rel):.4f} (< 0.10), {elapsed:.1f}s (< 30s)")
    assert _verdict(2, ok, detail), detail


# -- criterion 3: cost-to-go labels equal Dijkstra ---------------------------


def _stub_edge(cost):
    return Edge(
        nominal_states=np.zeros((1, 4)),
        nominal_controls=np.zeros((0, 2)),
        gains=np.zeros((0, 2, 4)),
        nominal_cost=float(cost),
        ltv_steps=[],
    )


def _dijkstra_cost_to_go(graph, goal):
    dist = {vid: np.inf for vid in graph.vertices}
    dist[goal] = 0.0
    heap = [(0.0, goal)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for eid in graph.in_edges[u]:
            e = graph.edges[eid]
            cand = d + e.nominal_cost
            if cand < dist[e.from_vertex]:
                dist[e.from_vertex] = cand
                heapq.heappush(heap, (cand, e.from_vertex))
    return dist


def test_criterion_03_value_iteration_equals_dijkstra():
    t0 = time.perf_counter()
    rng = np.random.default_rng(33)
    model = ModelSpec.double_integrator()
    mismatches = 0
    for _ in range(100):
        g = Graph(model)
        n = int(rng.integers(2, 201))
        for _ in range(n):
            g.add_vertex(rng.uniform(0, 10, size=4))
        for _ in range(int(rng.integers(n, 4 * n))):
            a, b = int(rng.integers(0, n)), int(rng.integers(0, n))
            if a == b or (a, b) in g._pair:
                continue
            g.add_edge(_stub_edge(rng.uniform(0.1, 5.0)), a, b)
        goal = int(rng.integers(0, n))
        labels = value_iteration(g, goal)
        oracle = _dijkstra_cost_to_go(g, goal)
        mismatches += sum(
            1 for vid in g.vertices if labels[vid] != oracle[vid]
        )
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 10.0
    detail = (f"100 random digraphs (up to 200 vertices): {mismatches} "
              f"label mismatches vs Dijkstra (exact), {elapsed:.1f}s (< 10s)")
    assert _verdict(3, ok, detail), detail


# -- criterion 4: steering lengths match the word-enumeration oracle ---------


def test_criterion_04_dubins_lengths():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4242)
    radius = 0.5
    worst = 0.0
    euclid_violations = 0
    for _ in range(1000):
        xa = np.array([rng.uniform(0, 20), rng.uniform(0, 10),
                       rng.uniform(-math.pi, math.pi)])
        xb = np.array([rng.uniform(0, 20), rng.uniform(0, 10),
                       rng.uniform(-math.pi, math.pi)])
        _, _, length = dubins_shortest(xa, xb, radius)
        oracle_len, _ = dubins_oracle(xa, xb, radius)
        worst = max(worst, abs(length - oracle_len))
        if length < np.linalg.norm(xb[:2] - xa[:2]) - 1e-9:
            euclid_violations += 1
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and euclid_violations == 0 and elapsed < 10.0
    detail = (f"1000 pose pairs at radius {radius}: max length error "
              f"{worst:.2e} (< 1e-6), {euclid_violations} below Euclidean, "
              f"{elapsed:.1f}s (< 10s)")
    assert _verdict(4, ok, detail), detail


# -- criterion 5: identical samples, equal first cost, fewer beliefs ---------


def test_criterion_05_informed_search_does_less_work():
    t0 = time.perf_counter()
    scenario, base = load_scenario(resolve_scenario("double_integrator_env1"))
    rng = np.random.default_rng(12345)
    samples = [sample_free(scenario, rng) for _ in range(400)]

    def stub_sampler(sample_list):
        it = iter(sample_list)
        return lambda scn, rng_: next(it)

    results = {}
    for mode in ("ibbt", "rrbt"):
        cfg = replace(base, mode=mode, seed=0, batch_size=1, goal_bias=0.0,
                      stop_after_first=True, max_batches=400)
        results[mode] = Planner(
            scenario, cfg, sampler=stub_sampler(samples)
        ).run()
    informed, baseline = results["ibbt"], results["rrbt"]
    cost_gap = abs(informed.cost - baseline.cost)
    nodes_i = informed.stats["nodes_created"]
    nodes_b = baseline.stats["nodes_created"]
    elapsed = time.perf_counter() - t0
    ok = informed.solved and baseline.solved and cost_gap < 1e-6 \
        and nodes_i < nodes_b and elapsed < 60.0
    detail = (f"shared sample sequence: first costs {informed.cost:.6f} vs "
              f"{baseline.cost:.6f} (gap {cost_gap:.2e} < 1e-6), belief nodes "
              f"{nodes_i} < {nodes_b}, {elapsed:.1f}s (< 60s)")
    assert _verdict(5, ok, detail), detail


# -- criterion 6: first solutions come faster with less queue work -----------


def test_criterion_06_first_solution_medians():
    t0 = time.perf_counter()
    cap = 15.0
    seeds = range(20)
    lines = []
    ok = True
    for name in ("double_integrator_env1", "double_integrator_env2"):
        scenario, cfg = load_scenario(resolve_scenario(name))
        walls = {"ibbt": [], "rrbt": []}
        pops = {"ibbt": [], "rrbt": []}
        for mode in ("ibbt", "rrbt"):
            for seed in seeds:
                rec, _ = run_single(scenario, cfg, mode, seed,
                                    max_seconds=cap, stop_after_first=True)
                wall = rec["first_solution_wall_s"]
                walls[mode].append(cap if wall is None else wall)
                pops[mode].append(rec["queue_pops"])
        wall_i = float(np.median(walls["ibbt"]))
        wall_b = float(np.median(walls["rrbt"]))
        pops_i = float(np.median(pops["ibbt"]))
        pops_b = float(np.median(pops["rrbt"]))
        ok = ok and wall_i <= wall_b and pops_i < pops_b
        lines.append(f"{name}: median first solution {wall_i:.2f}s vs "
                     f"{wall_b:.2f}s, median queue pops {pops_i:.0f} vs "
                     f"{pops_b:.0f}")
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 600.0
    detail = f"{'; '.join(lines)}; total {elapsed:.0f}s (< 600s)"
    assert _verdict(6, ok, detail), detail


# -- criterion 7: chance constraint forces the information detour ------------


@pytest.fixture(scope="module")
def env1_solution():
    scenario, base = load_scenario(resolve_scenario("double_integrator_env1"))
    cfg = replace(base, mode="ibbt", seed=0, max_batches=8)
    t0 = time.perf_counter()
    result = Planner(scenario, cfg).run()
    return scenario, base, result, time.perf_counter() - t0


def test_criterion_07_detour_through_information_region(env1_solution):
    scenario, base, result, run_elapsed = env1_solution
    t0 = time.perf_counter()
    direct = connect(scenario.model, scenario.start_state, scenario.goal_state)
    root = BeliefNode(vertex=0, P=np.array(scenario.P0),
                      P_tilde=np.array(scenario.P_tilde0), c=0.0, h=0.0)
    chance = ChanceConfig(delta=scenario.delta, mc_samples=base.mc_samples,
                          check_stride=1)
    verdict = propagate_edge(direct, root, scenario, chance,
                             np.random.default_rng(5), base.lambda_p)
    rejected = isinstance(verdict, Infeasible)
    polyline = solution_polyline(result)
    inside = scenario.positions_in_info_region(polyline[:-1])
    detours = int(inside.sum())
    elapsed = run_elapsed + time.perf_counter() - t0
    ok = rejected and verdict.probability >= scenario.delta and \
        result.solved and detours > 0 and elapsed < 60.0
    detail = (f"direct edge rejected at step "
              f"{verdict.step_index if rejected else 'n/a'} with collision "
              f"probability {verdict.probability if rejected else 0:.3f} "
              f">= {scenario.delta}; solution (cost {result.cost:.3f}) has "
              f"{detours} points inside the information region before the "
              f"goal; {elapsed:.1f}s (< 60s)")
    assert _verdict(7, ok, detail), detail


# -- criterion 8: anytime quality dominates the baseline at checkpoints ------


def test_criterion_08_anytime_checkpoint_medians():
    legs = [
        ("double_integrator_env2", 8.0, [2.0, 4.0, 8.0]),
        ("dubins_env1", 12.0, [3.0, 6.0, 12.0]),
    ]
    seeds = range(20)
    lines = []
    ok = True
    for name, budget, checkpoints in legs:
        scenario, cfg = load_scenario(resolve_scenario(name))
        traces = {"ibbt": [], "rrbt": []}
        for mode in ("ibbt", "rrbt"):
            for seed in seeds:
                rec, _ = run_single(scenario, cfg, mode, seed,
                                    max_seconds=budget)
                ok = ok and rec["wall_s"] < 120.0
                costs = rec["costs"]
                ok = ok and all(b < a for a, b in zip(costs, costs[1:]))
                traces[mode].append((rec["times"], costs))
        for t in checkpoints:
            med_i = float(np.median(
                [step_cost_at(ts, cs, t) for ts, cs in traces["ibbt"]]
            ))
            med_b = float(np.median(
                [step_cost_at(ts, cs, t) for ts, cs in traces["rrbt"]]
            ))
            ok = ok and med_i <= med_b + 1e-9
            lines.append(f"{name}@{t:g}s {med_i:.1f}|{med_b:.1f}")
    detail = ("median cost informed|baseline at checkpoints: "
              + ", ".join(lines)
              + "; every run under 120s, all anytime traces strictly "
                "decreasing")
    assert _verdict(8, ok, detail), detail


# -- criterion 9: executed solutions respect the chance constraint -----------


def test_criterion_09_solution_replay_collision_rates(env1_solution):
    scenario, base, result, _ = env1_solution
    assert result.solved
    t0 = time.perf_counter()
    delta = scenario.delta
    n_plan = base.mc_samples
    worst_margin = -np.inf
    worst_prob = 0.0
    for prev, step in zip(result.path, result.path[1:]):
        edge = result.graph.edges[step.edge]
        source = SimpleNamespace(P=prev.P, P_tilde=prev.P_tilde)
        rng = np.random.default_rng([99, step.edge])
        probs = edge_step_probabilities(edge, source, scenario, 100000, rng)
        se = np.sqrt(probs * (1.0 - probs) / n_plan)
        worst_margin = max(worst_margin, float((probs - (delta + 3 * se)).max()))
        worst_prob = max(worst_prob, float(probs.max()))
    elapsed = time.perf_counter() - t0
    ok = worst_margin < 0.0 and elapsed < 60.0
    detail = (f"replayed {len(result.path) - 1} edges at 100000 samples per "
              f"step: max collision estimate {worst_prob:.4f}, max margin "
              f"over delta+3SE {worst_margin:.4f} (< 0), {elapsed:.1f}s "
              f"(< 60s)")
    assert _verdict(9, ok, detail), detail


# -- criterion 10: batch-budget runs are byte reproducible -------------------


def test_criterion_10_result_files_are_byte_identical(tmp_path):
    t0 = time.perf_counter()
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    rc_a = cli_main(["plan", "--scenario", "double_integrator_env1",
                     "--out", str(out_a), "--max-batches", "3"])
    rc_b = cli_main(["plan", "--scenario", "double_integrator_env1",
                     "--out", str(out_b), "--max-batches", "3"])
    bytes_a = (out_a / "result.json").read_bytes()
    bytes_b = (out_b / "result.json").read_bytes()
    identical = bytes_a == bytes_b
    elapsed = time.perf_counter() - t0
    cost = json.loads(bytes_a)["cost"]
    ok = rc_a == 0 and rc_b == 0 and identical and elapsed < 60.0
    detail = (f"two batch-budget runs: result files byte-identical="
              f"{identical} ({len(bytes_a)} bytes, cost {cost}), "
              f"{elapsed:.1f}s (< 60s)")
    assert _verdict(10, ok, detail), detail
