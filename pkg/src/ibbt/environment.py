"""Workspace model: bounds, convex obstacles, information regions, sampling.

Obstacles and information regions are convex polygons. Membership is closed
(boundary points count as inside). Collision means the position leaves the
workspace bounds or enters any obstacle.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .dynamics import DOUBLE_INTEGRATOR, ModelSpec, wrap_angle


class SampleBudgetExceeded(RuntimeError):
    """Rejection sampling failed to find a free state."""


class ConvexPolygon:
    """Convex polygon stored counterclockwise with outward edge normals."""

    __slots__ = ("vertices", "normals", "offsets")

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
            raise ValueError("polygon needs at least 3 planar vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("polygon vertices must be finite")
        area2 = float(
            np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        )
        if abs(area2) < 1e-12:
            raise ValueError("polygon is degenerate (zero area)")
        if area2 < 0.0:
            v = v[::-1].copy()
        edges = np.roll(v, -1, axis=0) - v
        cross = edges[:, 0] * np.roll(edges[:, 1], -1) - edges[:, 1] * np.roll(
            edges[:, 0], -1
        )
        if np.any(cross < -1e-12):
            raise ValueError("polygon is not convex")
        self.vertices = v
        self.normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        self.offsets = np.sum(self.normals * v, axis=1)

    @classmethod
    def rect(cls, xmin, ymin, xmax, ymax):
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("rectangle must have positive extent")
        return cls([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])

    def contains(self, points):
        """Closed membership test for an (m, 2) array; returns bool array."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all(pts @ self.normals.T <= self.offsets + 0.0, axis=1)

    @property
    def centroid(self):
        return self.vertices.mean(axis=0)


@dataclass
class NoiseSpec:
    """Measurement noise matrices inside and outside information regions."""

    D_info: np.ndarray
    D_default: np.ndarray

    def __post_init__(self):
        self.D_info = np.asarray(self.D_info, dtype=float)
        self.D_default = np.asarray(self.D_default, dtype=float)
        for name, d in (("D_info", self.D_info), ("D_default", self.D_default)):
            if d.ndim != 2 or d.shape[0] != d.shape[1]:
                raise ValueError(f"{name} must be square")
            if np.min(np.linalg.eigvalsh(d @ d.T)) <= 0.0:
                raise ValueError(f"{name} must give positive definite DD^T")


@dataclass
class ChanceConfig:
    """Chance-constraint evaluation settings."""

    delta: float = 0.05
    mc_samples: int = 1000
    check_stride: int = 1

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be positive")
        if self.check_stride < 1:
            raise ValueError("check_stride must be positive")


@dataclass
class Scenario:
    """A planning problem: workspace, noise model, endpoints, and beliefs."""

    bounds: np.ndarray
    obstacles: list
    info_regions: list
    start_state: np.ndarray
    goal_state: np.ndarray
    P0: np.ndarray
    P_tilde0: np.ndarray
    delta: float
    model: ModelSpec
    noise: NoiseSpec
    name: str = "scenario"
    _obstacle_cache: tuple = field(default=None, repr=False, compare=False)
    _info_cache: tuple = field(default=None, repr=False, compare=False)
    _noise_cache: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float)
        self.start_state = np.asarray(self.start_state, dtype=float)
        self.goal_state = np.asarray(self.goal_state, dtype=float)
        self.P0 = np.asarray(self.P0, dtype=float)
        self.P_tilde0 = np.asarray(self.P_tilde0, dtype=float)

    @property
    def xmin(self):
        return self.bounds[0]

    @property
    def ymin(self):
        return self.bounds[1]

    @property
    def xmax(self):
        return self.bounds[2]

    @property
    def ymax(self):
        return self.bounds[3]

    @property
    def area(self):
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    @property
    def diagonal(self):
        return math.hypot(self.xmax - self.xmin, self.ymax - self.ymin)

    def _stacked_obstacles(self):
        # stacked half-plane rows allow one matmul for all obstacles
        if self._obstacle_cache is None:
            if self.obstacles:
                normals = np.vstack([o.normals for o in self.obstacles])
                offsets = np.concatenate([o.offsets for o in self.obstacles])
                slices = []
                row = 0
                for o in self.obstacles:
                    slices.append((row, row + len(o.offsets)))
                    row += len(o.offsets)
            else:
                normals = np.zeros((0, 2))
                offsets = np.zeros(0)
                slices = []
            self._obstacle_cache = (normals, offsets, slices)
        return self._obstacle_cache

    def positions_in_collision(self, points):
        """Bool array: outside bounds or inside any obstacle, per point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        bad = (
            (pts[:, 0] < self.xmin)
            | (pts[:, 0] > self.xmax)
            | (pts[:, 1] < self.ymin)
            | (pts[:, 1] > self.ymax)
        )
        normals, offsets, slices = self._stacked_obstacles()
        if slices:
            vals = pts @ normals.T <= offsets
            for lo, hi in slices:
                bad |= np.all(vals[:, lo:hi], axis=1)
        return bad

    def _stacked_info(self):
        if self._info_cache is None:
            if self.info_regions:
                normals = np.vstack([r.normals for r in self.info_regions])
                offsets = np.concatenate([r.offsets for r in self.info_regions])
                slices = []
                row = 0
                for r in self.info_regions:
                    slices.append((row, row + len(r.offsets)))
                    row += len(r.offsets)
            else:
                normals = np.zeros((0, 2))
                offsets = np.zeros(0)
                slices = []
            self._info_cache = (normals, offsets, slices)
        return self._info_cache

    def positions_in_info_region(self, points):
        """Bool array: inside any information region, per point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(len(pts), dtype=bool)
        normals, offsets, slices = self._stacked_info()
        if slices:
            vals = pts @ normals.T <= offsets
            for lo, hi in slices:
                inside |= np.all(vals[:, lo:hi], axis=1)
        return inside

    def in_info_region(self, pos):
        pos = np.asarray(pos, dtype=float)
        return bool(self.positions_in_info_region(pos[:2][None, :])[0])

    def noise_products(self):
        """Cached (D_info D_info^T, D_default D_default^T) pair."""
        if self._noise_cache is None:
            self._noise_cache = (
                self.noise.D_info @ self.noise.D_info.T,
                self.noise.D_default @ self.noise.D_default.T,
            )
        return self._noise_cache

    def measurement_noise_at(self, pos):
        """Measurement noise matrix D at a workspace position."""
        return self.noise.D_info if self.in_info_region(pos) else self.noise.D_default


def measurement_noise_at(pos, scenario):
    """Module-level alias for Scenario.measurement_noise_at."""
    return scenario.measurement_noise_at(pos)


def obstacle_free(states, scenario):
    """True when every state's position is in bounds and outside obstacles."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.size == 0:
        return True
    return not bool(np.any(scenario.positions_in_collision(states[:, :2])))


def psd_sqrt2_stack(covs):
    """Symmetric PSD square roots of stacked 2x2 covariances, closed form.

    For PSD A the unique PSD root is (A + sqrt(det A) I) / sqrt(tr A +
    2 sqrt(det A)). Eigenvalues slightly below zero (roundoff) are tolerated
    by clamping the determinant; anything below -1e-9 raises.
    """
    c = np.asarray(covs, dtype=float)
    squeeze = c.ndim == 2
    if squeeze:
        c = c[None, :, :]
    c = 0.5 * (c + np.swapaxes(c, -1, -2))
    tr = c[:, 0, 0] + c[:, 1, 1]
    det = c[:, 0, 0] * c[:, 1, 1] - c[:, 0, 1] * c[:, 1, 0]
    disc = np.sqrt(np.maximum((c[:, 0, 0] - c[:, 1, 1]) ** 2 + 4.0 * c[:, 0, 1] ** 2, 0.0))
    if np.min(0.5 * (tr - disc)) < -1e-9:
        raise ValueError("position covariance has a significantly negative eigenvalue")
    s = np.sqrt(np.maximum(det, 0.0))
    t = np.sqrt(np.maximum(tr + 2.0 * s, 0.0))
    roots = c + s[:, None, None] * np.eye(2)
    safe = t > 0.0
    roots[safe] /= t[safe, None, None]
    roots[~safe] = 0.0
    return roots[0] if squeeze else roots


def psd_sqrt2(cov):
    """Symmetric PSD square root of a 2x2 covariance, clamping tiny negatives."""
    return psd_sqrt2_stack(np.asarray(cov, dtype=float))


def collision_probabilities(mean_positions, pos_covs, scenario, n_samples, rng):
    """Monte Carlo collision estimates for a batch of 2D Gaussians.

    Draws n_samples per row from one stream in row order, so the estimates
    equal a sequence of single-row calls against the same generator. The
    stream depends only on (rng state, batch shape), never on the obstacle
    set, so estimates are monotone when obstacles are added.
    """
    means = np.atleast_2d(np.asarray(mean_positions, dtype=float))
    m = len(means)
    roots = psd_sqrt2_stack(np.asarray(pos_covs, dtype=float).reshape(m, 2, 2))
    draws = rng.standard_normal((m, n_samples, 2))
    pts = means[:, None, :] + draws @ np.swapaxes(roots, -1, -2)
    bad = scenario.positions_in_collision(pts.reshape(-1, 2)).reshape(m, n_samples)
    return np.count_nonzero(bad, axis=1) / float(n_samples)


def collision_probability(mean_pos, pos_cov, scenario, n_samples, rng):
    """Monte Carlo estimate of P(position in collision) for a 2D Gaussian."""
    mean = np.asarray(mean_pos, dtype=float).reshape(2)
    probs = collision_probabilities(
        mean[None, :], np.asarray(pos_cov, dtype=float)[None, :, :],
        scenario, n_samples, rng,
    )
    return float(probs[0])


def sample_free(scenario, rng, max_tries=100000):
    """Draw a uniformly random collision-free state.

    Positions are sampled uniformly over the bounds and rejected while in
    collision; remaining coordinates (velocity or heading) are drawn only
    after a position is accepted, so the draw count per success is fixed.
    """
    model = scenario.model
    low = np.array([scenario.xmin, scenario.ymin])
    high = np.array([scenario.xmax, scenario.ymax])
    for _ in range(max_tries):
        pos = rng.uniform(low, high)
        if bool(scenario.positions_in_collision(pos)[0]):
            continue
        if model.kind == DOUBLE_INTEGRATOR:
            vlo, vhi = model.velocity_box
            vel = rng.uniform(vlo, vhi, size=2)
            return np.array([pos[0], pos[1], vel[0], vel[1]])
        th = float(wrap_angle(rng.uniform(-math.pi, math.pi)))
        return np.array([pos[0], pos[1], th])
    raise SampleBudgetExceeded(f"no free sample found in {max_tries} tries")
