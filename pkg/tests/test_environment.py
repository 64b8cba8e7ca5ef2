"""Workspace geometry, measurement-noise regions, and collision estimates."""

import math

import numpy as np
import pytest
from shapely.geometry import Point, Polygon as ShapelyPolygon

from ibbt.environment import (
    ChanceConfig,
    ConvexPolygon,
    NoiseSpec,
    SampleBudgetExceeded,
    Scenario,
    collision_probabilities,
    collision_probability,
    measurement_noise_at,
    obstacle_free,
    psd_sqrt2,
    psd_sqrt2_stack,
    sample_free,
)
from ibbt.dynamics import ModelSpec

from conftest import make_open_scenario, random_psd


def _random_convex(rng, n_pts=8):
    pts = rng.uniform(0, 10, size=(n_pts, 2))
    center = pts.mean(axis=0)
    hull = sorted(pts, key=lambda p: math.atan2(p[1] - center[1], p[0] - center[0]))
    poly = ShapelyPolygon(hull).convex_hull
    return np.array(poly.exterior.coords[:-1])


def test_polygon_membership_matches_shapely():
    rng = np.random.default_rng(21)
    for _ in range(40):
        verts = _random_convex(rng)
        if len(verts) < 3:
            continue
        poly = ConvexPolygon(verts)
        ref = ShapelyPolygon(verts)
        queries = rng.uniform(-1, 11, size=(200, 2))
        mine = poly.contains(queries)
        theirs = np.array([ref.covers(Point(q)) for q in queries])
        # skip points within float slop of the boundary; the two libraries
        # may disagree there by design
        near_edge = np.array(
            [ref.exterior.distance(Point(q)) < 1e-9 for q in queries]
        )
        agree = mine == theirs
        assert np.all(agree | near_edge)


def test_polygon_rejects_degenerate_input():
    with pytest.raises(ValueError):
        ConvexPolygon([[0, 0], [1, 0]])
    with pytest.raises(ValueError):
        ConvexPolygon([[0, 0], [1, 0], [2, 0]])


def test_polygon_accepts_either_winding():
    cw = ConvexPolygon([[0, 0], [0, 1], [1, 1], [1, 0]])
    ccw = ConvexPolygon([[0, 0], [1, 0], [1, 1], [0, 1]])
    probe = np.array([[0.5, 0.5], [1.5, 0.5]])
    assert list(cw.contains(probe)) == [True, False]
    assert list(ccw.contains(probe)) == [True, False]


def test_rect_constructor_and_centroid():
    r = ConvexPolygon.rect(1.0, 2.0, 3.0, 6.0)
    assert list(r.contains(np.array([[2.0, 4.0]])))[0]
    assert np.allclose(r.centroid, [2.0, 4.0])


def test_out_of_bounds_counts_as_collision(open_scenario):
    pts = np.array([[4.0, 2.5], [-0.5, 2.5], [4.0, 5.5], [8.5, 2.5]])
    hits = open_scenario.positions_in_collision(pts)
    assert list(hits) == [False, True, True, True]


def test_info_region_membership(open_scenario):
    pts = np.array([[4.0, 2.5], [1.0, 2.5], [3.0, 0.0]])
    inside = open_scenario.positions_in_info_region(pts)
    assert list(inside) == [True, False, True]
    assert open_scenario.in_info_region([4.0, 2.5])
    assert not open_scenario.in_info_region([6.9, 2.5])


def test_measurement_noise_selects_by_region(open_scenario):
    d_in = measurement_noise_at([4.0, 2.5], open_scenario)
    d_out = measurement_noise_at([1.0, 2.5], open_scenario)
    assert np.allclose(d_in, 0.01 * np.eye(4))
    assert np.allclose(d_out, np.eye(4))


def test_noise_spec_requires_positive_definite_products():
    with pytest.raises(ValueError):
        NoiseSpec(D_info=np.zeros((4, 4)), D_default=np.eye(4))
    spec = NoiseSpec(D_info=0.1 * np.eye(3), D_default=2.0 * np.eye(3))
    assert spec.D_info.shape == (3, 3)


def test_chance_config_validation():
    with pytest.raises(ValueError):
        ChanceConfig(delta=0.0)
    with pytest.raises(ValueError):
        ChanceConfig(delta=1.0)
    with pytest.raises(ValueError):
        ChanceConfig(delta=0.1, mc_samples=0)
    with pytest.raises(ValueError):
        ChanceConfig(delta=0.1, check_stride=0)
    cfg = ChanceConfig(delta=0.05, mc_samples=100, check_stride=2)
    assert cfg.delta == 0.05


def test_obstacle_free_checks_every_state(open_scenario):
    good = np.array([[1.0, 2.5, 0, 0], [4.0, 2.5, 0, 0], [7.0, 2.5, 0, 0]])
    bad = np.array([[1.0, 2.5, 0, 0], [9.0, 2.5, 0, 0]])
    assert obstacle_free(good, open_scenario)
    assert not obstacle_free(bad, open_scenario)


def test_psd_sqrt2_matches_eigendecomposition():
    rng = np.random.default_rng(17)
    covs = np.stack([random_psd(rng, 2, scale=rng.uniform(0.1, 5)) for _ in range(60)])
    roots = psd_sqrt2_stack(covs)
    for cov, root in zip(covs, roots):
        assert np.allclose(root @ root.T, cov, atol=1e-10)
        w, v = np.linalg.eigh(cov)
        ref = v @ np.diag(np.sqrt(np.clip(w, 0, None))) @ v.T
        assert np.allclose(root @ root.T, ref @ ref.T, atol=1e-10)
    single = psd_sqrt2(covs[0])
    assert np.allclose(single @ single.T, covs[0], atol=1e-10)


def test_psd_sqrt2_handles_rank_deficiency():
    cov = np.array([[1.0, 0.0], [0.0, 0.0]])
    root = psd_sqrt2(cov)
    assert np.allclose(root @ root.T, cov, atol=1e-12)


def test_collision_probability_matches_halfplane_analytics():
    # a single wall whose face lies one sigma from the mean: the analytic
    # mass beyond the face is Phi(-1), well inside workspace bounds
    model = ModelSpec.double_integrator()
    scenario = Scenario(
        bounds=[-50, -50, 50, 50],
        obstacles=[ConvexPolygon.rect(1.0, -40, 40, 40)],
        info_regions=[],
        start_state=[-5.0, 0.0, 0.0, 0.0],
        goal_state=[-4.0, 0.0, 0.0, 0.0],
        P0=0.01 * np.eye(4),
        P_tilde0=0.01 * np.eye(4),
        delta=0.1,
        model=model,
        noise=NoiseSpec(D_info=0.01 * np.eye(4), D_default=np.eye(4)),
    )
    rng = np.random.default_rng(31)
    p = collision_probability(
        np.array([0.0, 0.0]), np.eye(2), scenario, 200000, rng
    )
    analytic = 0.5 * math.erfc(1.0 / math.sqrt(2.0))
    assert p == pytest.approx(analytic, abs=3e-3)


def test_collision_probabilities_batched_matches_singles():
    scenario = make_open_scenario()
    rng = np.random.default_rng(41)
    means = np.array([[0.2, 2.5], [4.0, 0.1], [7.9, 4.9]])
    covs = np.stack([0.05 * np.eye(2)] * 3)
    batched = collision_probabilities(means, covs, scenario, 4000, np.random.default_rng(7))
    singles = [
        collision_probability(m, c, scenario, 4000, np.random.default_rng(7))
        for m, c in zip(means, covs)
    ]
    # same estimator, independent draws: close but not identical
    for b, s in zip(batched, singles):
        assert abs(b - s) < 0.03
    assert batched.shape == (3,)
    assert np.all((batched >= 0) & (batched <= 1))
    del rng


def test_sample_free_respects_geometry(open_scenario):
    rng = np.random.default_rng(53)
    for _ in range(200):
        s = sample_free(open_scenario, rng)
        assert s.shape == (4,)
        assert not bool(open_scenario.positions_in_collision(s[:2])[0])
        vlo, vhi = open_scenario.model.velocity_box
        assert vlo <= s[2] <= vhi and vlo <= s[3] <= vhi


def test_sample_free_budget_error():
    model = ModelSpec.double_integrator()
    # obstacles cover the entire sampling box
    scenario = Scenario(
        bounds=[0, 0, 2, 2],
        obstacles=[ConvexPolygon.rect(-1, -1, 3, 3)],
        info_regions=[],
        start_state=[1.0, 1.0, 0.0, 0.0],
        goal_state=[1.5, 1.0, 0.0, 0.0],
        P0=0.01 * np.eye(4),
        P_tilde0=0.01 * np.eye(4),
        delta=0.1,
        model=model,
        noise=NoiseSpec(D_info=0.01 * np.eye(4), D_default=np.eye(4)),
    )
    with pytest.raises(SampleBudgetExceeded):
        sample_free(scenario, np.random.default_rng(0), max_tries=500)
