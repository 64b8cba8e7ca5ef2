"""Robot models, steering, linearization, and LQR tracking gains.

Two models are supported: a discrete-time double integrator (state
[x, y, vx, vy], control [ax, ay]) and a unit-speed Dubins car (state
[x, y, theta], control [turn rate]). Steering produces an Edge whose
nominal states satisfy the discrete dynamics step by step, so replaying
the stored controls reproduces the stored states to machine precision.
"""

from dataclasses import dataclass, field
import math

import numpy as np

DOUBLE_INTEGRATOR = "double_integrator"
DUBINS = "dubins"

TWO_PI = 2.0 * math.pi


class SteeringError(RuntimeError):
    """No nominal trajectory could be produced between the given states."""


def wrap_angle(theta):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta), TWO_PI)


@dataclass
class ModelSpec:
    """Model parameters shared by steering, propagation, and simulation.

    process_noise_G holds noise *densities*; the per-step matrix is
    sqrt(step_dt) * process_noise_G.
    """

    kind: str
    dt: float
    process_noise_G: np.ndarray
    lqr_Q: np.ndarray
    lqr_R: np.ndarray
    turn_radius: float = 1.0
    steering_speed_scale: float = 1.0
    control_effort_weight: float = 0.5
    velocity_box: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.kind not in (DOUBLE_INTEGRATOR, DUBINS):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        if self.kind == DUBINS and not (self.turn_radius > 0.0):
            raise ValueError("turn_radius must be positive")
        self.process_noise_G = np.asarray(self.process_noise_G, dtype=float)
        self.lqr_Q = np.asarray(self.lqr_Q, dtype=float)
        self.lqr_R = np.asarray(self.lqr_R, dtype=float)

    @property
    def n_x(self):
        return 4 if self.kind == DOUBLE_INTEGRATOR else 3

    @property
    def n_u(self):
        return 2 if self.kind == DOUBLE_INTEGRATOR else 1

    @property
    def n_y(self):
        return self.n_x

    @classmethod
    def double_integrator(cls, dt=0.1, **kw):
        g = np.diag([0.03, 0.03, 0.02, 0.02])
        kw.setdefault("process_noise_G", g)
        kw.setdefault("lqr_Q", np.eye(4))
        kw.setdefault("lqr_R", np.eye(2))
        return cls(kind=DOUBLE_INTEGRATOR, dt=dt, **kw)

    @classmethod
    def dubins(cls, dt=0.1, turn_radius=1.0, **kw):
        kw.setdefault("process_noise_G", 0.02 * np.eye(3))
        kw.setdefault("lqr_Q", 2.0 * np.eye(3))
        kw.setdefault("lqr_R", np.eye(1))
        return cls(kind=DUBINS, dt=dt, turn_radius=turn_radius, **kw)


@dataclass
class LtvStep:
    """One step of a time-varying linearization along a nominal edge.

    D (measurement noise) is left None here; it depends on where the step
    lands in the workspace and is resolved at propagation time.
    """

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    C: np.ndarray
    dt: float
    D: np.ndarray = None


@dataclass
class Edge:
    """Nominal trajectory between two graph vertices plus tracking data.

    nominal_states has shape (N, n_x); controls and gains have N-1 rows.
    A degenerate edge (coincident endpoints) has a single state and no steps.
    Graph ids are assigned on insertion.
    """

    nominal_states: np.ndarray
    nominal_controls: np.ndarray
    gains: np.ndarray
    nominal_cost: float
    ltv_steps: list
    id: int = None
    from_vertex: int = None
    to_vertex: int = None
    _prop_aux: tuple = field(default=None, repr=False, compare=False)

    @property
    def n_steps(self):
        return len(self.ltv_steps)


def step_nominal(model, x, u, dt=None):
    """Apply one step of the discrete nominal dynamics."""
    if dt is None:
        dt = model.dt
    if model.kind == DOUBLE_INTEGRATOR:
        a, b = di_matrices(dt)
        return a @ np.asarray(x, dtype=float) + b @ np.asarray(u, dtype=float)
    return dubins_step(x, float(np.asarray(u).reshape(-1)[0]), dt)


def dubins_step(x, u, dt):
    """Forward-Euler Dubins step at unit speed with wrapped heading."""
    return np.array(
        [
            x[0] + dt * math.cos(x[2]),
            x[1] + dt * math.sin(x[2]),
            float(wrap_angle(x[2] + dt * u)),
        ]
    )


def di_matrices(dt):
    """Constant (A, B) pair for the double integrator at step dt."""
    a = np.eye(4)
    a[0, 2] = dt
    a[1, 3] = dt
    b = np.array(
        [[0.5 * dt * dt, 0.0], [0.0, 0.5 * dt * dt], [dt, 0.0], [0.0, dt]]
    )
    return a, b


def linearize(model, nominal_states, nominal_controls, dt=None):
    """Build the LTV step sequence (A_k, B_k, G_k, C=I) along a nominal edge.

    For the Dubins car A_k is the Jacobian at the k-th nominal state; dt may
    override model.dt because Dubins edges use an edge-specific step length.
    """
    states = np.asarray(nominal_states, dtype=float)
    n_steps = len(states) - 1
    if dt is None:
        dt = model.dt
    c = np.eye(model.n_x)
    g = math.sqrt(dt) * model.process_noise_G
    steps = []
    if model.kind == DOUBLE_INTEGRATOR:
        a, b = di_matrices(dt)
        for _ in range(n_steps):
            steps.append(LtvStep(A=a, B=b, G=g, C=c, dt=dt))
        return steps
    b = np.array([[0.0], [0.0], [dt]])
    for k in range(n_steps):
        th = states[k, 2]
        a = np.eye(3)
        a[0, 2] = -math.sin(th) * dt
        a[1, 2] = math.cos(th) * dt
        steps.append(LtvStep(A=a, B=b, G=g, C=c, dt=dt))
    return steps


def lqr_gains(a_seq, b_seq, q, r, return_value_matrices=False):
    """Finite-horizon discrete LQR gains via a backward Riccati recursion.

    Returns K with the negative sign folded in, so the tracking loop is
    x_{k+1} = (A_k + B_k K_k) x_k. Stage and terminal weights both use q.
    """
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    n = len(a_seq)
    if len(b_seq) != n:
        raise ValueError("A and B sequences must have equal length")
    try:
        np.linalg.cholesky(0.5 * (r + r.T))
    except np.linalg.LinAlgError:
        raise ValueError("R must be symmetric positive definite") from None
    s = q.copy()
    gains = []
    values = [s]
    for a, b in zip(reversed(a_seq), reversed(b_seq)):
        bsb = r + b.T @ s @ b
        k = -np.linalg.solve(bsb, b.T @ s @ a)
        acl = a + b @ k
        s = q + k.T @ r @ k + acl.T @ s @ acl
        s = 0.5 * (s + s.T)
        gains.append(k)
        values.append(s)
    gains.reverse()
    values.reverse()
    gains = np.array(gains) if gains else np.zeros((0, r.shape[0], q.shape[0]))
    if return_value_matrices:
        return gains, values
    return gains


def state_distance(model, states, x):
    """Distance from each row of states to x under the model's metric.

    Double integrator: ||dpos|| + 0.5 ||dvel||. Dubins: ||dpos|| plus a
    wrapped heading term weighted by half the turn radius.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    x = np.asarray(x, dtype=float)
    dpos = np.linalg.norm(states[:, :2] - x[:2], axis=1)
    if model.kind == DOUBLE_INTEGRATOR:
        return dpos + 0.5 * np.linalg.norm(states[:, 2:4] - x[2:4], axis=1)
    dth = np.abs(wrap_angle(states[:, 2] - x[2]))
    return dpos + 0.5 * model.turn_radius * dth


def _finalize_edge(model, states, controls, cost, dt):
    ltv = linearize(model, states, controls, dt=dt)
    a_seq = [s.A for s in ltv]
    b_seq = [s.B for s in ltv]
    gains = lqr_gains(a_seq, b_seq, model.lqr_Q, model.lqr_R)
    return Edge(
        nominal_states=np.asarray(states, dtype=float),
        nominal_controls=np.asarray(controls, dtype=float),
        gains=gains,
        nominal_cost=float(cost),
        ltv_steps=ltv,
    )


def _degenerate_edge(model, xa):
    return Edge(
        nominal_states=np.asarray([xa], dtype=float),
        nominal_controls=np.zeros((0, model.n_u)),
        gains=np.zeros((0, model.n_u, model.n_x)),
        nominal_cost=0.0,
        ltv_steps=[],
    )


def connect(model, xa, xb):
    """Steer from state xa to state xb; returns an Edge.

    Raises SteeringError when no trajectory can be produced (for the models
    here that only happens on numerical failure, not unreachability).
    """
    xa = np.asarray(xa, dtype=float).copy()
    xb = np.asarray(xb, dtype=float).copy()
    if xa.shape != (model.n_x,) or xb.shape != (model.n_x,):
        raise ValueError("state dimension does not match the model")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(xb))):
        raise ValueError("states must be finite")
    if model.kind == DUBINS:
        xa[2] = wrap_angle(xa[2])
        xb[2] = wrap_angle(xb[2])
    if np.allclose(xa, xb, rtol=0.0, atol=1e-9):
        return _degenerate_edge(model, xa)
    if model.kind == DOUBLE_INTEGRATOR:
        return _connect_double_integrator(model, xa, xb)
    return _connect_dubins(model, xa, xb)


def _connect_double_integrator(model, xa, xb):
    """Minimum-energy steering over a horizon tied to the travel distance."""
    dt = model.dt
    dist = float(np.linalg.norm(xb[:2] - xa[:2]))
    n = max(2, int(math.ceil(model.steering_speed_scale * dist / dt - 1e-9)))
    a, b = di_matrices(dt)
    # reach[k] = A^(n-1-k) B, accumulated backward; pw ends at A^n
    reach = [None] * n
    pw = np.eye(4)
    for k in range(n - 1, -1, -1):
        reach[k] = pw @ b
        pw = a @ pw
    gram = np.zeros((4, 4))
    for m in reach:
        gram += m @ m.T
    try:
        lam = np.linalg.solve(gram, xb - pw @ xa)
    except np.linalg.LinAlgError:
        raise SteeringError("controllability Gramian is singular") from None
    controls = np.array([m.T @ lam for m in reach])
    states = np.empty((n + 1, 4))
    states[0] = xa
    x = xa
    for k in range(n):
        x = a @ x + b @ controls[k]
        states[k + 1] = x
    if np.linalg.norm(states[-1] - xb) > 1e-6:
        raise SteeringError("double integrator steering failed to reach target")
    w = model.control_effort_weight
    cost = float(np.sum(dt * (1.0 + w * np.sum(controls**2, axis=1))))
    return _finalize_edge(model, states, controls, cost, dt)


# -- Dubins geometry ---------------------------------------------------------

DUBINS_WORDS = ("LSL", "RSR", "LSR", "RSL", "RLR", "LRL")


def _mod2pi(x):
    m = x - TWO_PI * math.floor(x / TWO_PI)
    # a hair under a full turn is a zero arc that underflowed
    return 0.0 if m > TWO_PI - 1e-9 else m


def _circle_center(pos, theta, turn, r):
    if turn == "L":
        return np.array([pos[0] - r * math.sin(theta), pos[1] + r * math.cos(theta)])
    return np.array([pos[0] + r * math.sin(theta), pos[1] - r * math.cos(theta)])


def _apply_segments(pose, segments, r):
    """Closed-form endpoint of a Dubins segment list from a start pose."""
    x, y, th = pose
    for kind, length in segments:
        if kind == "S":
            x += length * math.cos(th)
            y += length * math.sin(th)
        else:
            sgn = 1.0 if kind == "L" else -1.0
            ang = sgn * length / r
            x += sgn * r * (math.sin(th + ang) - math.sin(th))
            y += sgn * r * (math.cos(th) - math.cos(th + ang))
            th += ang
    return np.array([x, y, th])


def _valid_word(xa, xb, segments, r):
    if any(length < -1e-9 for _, length in segments):
        return False
    end = _apply_segments(xa, segments, r)
    tol = 1e-8 * max(1.0, r)
    if np.linalg.norm(end[:2] - xb[:2]) > tol:
        return False
    return abs(float(wrap_angle(end[2] - xb[2]))) < 1e-8


def _csc_candidates(word, xa, xb, r):
    """Straight-tangent construction between the two turning circles."""
    first, _, last = word
    c1 = _circle_center(xa[:2], xa[2], first, r)
    c2 = _circle_center(xb[:2], xb[2], last, r)
    v = c2 - c1
    dist = float(np.linalg.norm(v))
    out = []
    if first == last:
        # outer tangent runs parallel to the center line
        psi = math.atan2(v[1], v[0])
        s = dist
        if first == "L":
            t, q = _mod2pi(psi - xa[2]), _mod2pi(xb[2] - psi)
        else:
            t, q = _mod2pi(xa[2] - psi), _mod2pi(psi - xb[2])
        out.append([(first, r * t), ("S", s), (last, r * q)])
        return out
    if dist < 2.0 * r - 1e-12:
        return out
    # inner tangent: normal n on the first circle satisfies v . n = 2r
    phi = math.atan2(v[1], v[0])
    gamma = math.acos(min(1.0, 2.0 * r / max(dist, 1e-300)))
    for sign in (1.0, -1.0):
        n = np.array([math.cos(phi + sign * gamma), math.sin(phi + sign * gamma)])
        tdir = np.array([-n[1], n[0]]) if first == "L" else np.array([n[1], -n[0]])
        s = float(tdir @ v)
        if s < -1e-9 or np.linalg.norm(v - 2.0 * r * n - s * tdir) > 1e-6 * max(1.0, r):
            continue
        psi = math.atan2(tdir[1], tdir[0])
        t = _mod2pi(psi - xa[2]) if first == "L" else _mod2pi(xa[2] - psi)
        q = _mod2pi(xb[2] - psi) if last == "L" else _mod2pi(psi - xb[2])
        out.append([(first, r * t), ("S", max(s, 0.0)), (last, r * q)])
    return out


def _ccc_candidates(word, xa, xb, r):
    """Middle circle tangent to both end circles (two mirror placements)."""
    first, mid, last = word
    c1 = _circle_center(xa[:2], xa[2], first, r)
    c3 = _circle_center(xb[:2], xb[2], last, r)
    v = c3 - c1
    dist = float(np.linalg.norm(v))
    out = []
    if dist > 4.0 * r + 1e-12 or dist < 1e-12:
        return out
    half = 0.5 * dist
    h = math.sqrt(max(4.0 * r * r - half * half, 0.0))
    u = v / dist
    perp = np.array([-u[1], u[0]])
    mpt = c1 + half * u
    for sign in (1.0, -1.0):
        c2 = mpt + sign * h * perp
        p1 = 0.5 * (c1 + c2)
        p2 = 0.5 * (c2 + c3)
        a_start = math.atan2(xa[1] - c1[1], xa[0] - c1[0])
        a_p1c1 = math.atan2(p1[1] - c1[1], p1[0] - c1[0])
        a_p1c2 = math.atan2(p1[1] - c2[1], p1[0] - c2[0])
        a_p2c2 = math.atan2(p2[1] - c2[1], p2[0] - c2[0])
        a_p2c3 = math.atan2(p2[1] - c3[1], p2[0] - c3[0])
        a_end = math.atan2(xb[1] - c3[1], xb[0] - c3[0])
        if first == "L":
            t = _mod2pi(a_p1c1 - a_start)
            p = _mod2pi(a_p1c2 - a_p2c2)
            q = _mod2pi(a_end - a_p2c3)
        else:
            t = _mod2pi(a_start - a_p1c1)
            p = _mod2pi(a_p2c2 - a_p1c2)
            q = _mod2pi(a_p2c3 - a_end)
        out.append([(first, r * t), (mid, r * p), (last, r * q)])
    return out


def dubins_shortest(xa, xb, r):
    """Shortest Dubins word between two poses.

    Returns (word, segments, length); segments are (kind, arc length) in
    world units. Ties within 1e-9 resolve in the fixed word order
    LSL, RSR, LSR, RSL, RLR, LRL.
    """
    candidates = []
    for idx, word in enumerate(DUBINS_WORDS):
        gen = _ccc_candidates if word in ("RLR", "LRL") else _csc_candidates
        for segs in gen(word, xa, xb, r):
            segs = [(k, max(0.0, s)) for k, s in segs]
            if _valid_word(xa, xb, segs, r):
                candidates.append((idx, sum(s for _, s in segs), word, segs))
    if not candidates:
        raise SteeringError("no valid Dubins word between poses")
    best_len = min(c[1] for c in candidates)
    idx, length, word, segs = min(
        (c for c in candidates if c[1] <= best_len + 1e-9), key=lambda c: c[0]
    )
    return word, segs, length


def _connect_dubins(model, xa, xb):
    r = model.turn_radius
    word, segments, length = dubins_shortest(xa, xb, r)
    if length < 1e-9:
        return _degenerate_edge(model, xa)
    n = max(3, int(math.ceil(length / model.dt - 1e-9)))
    dt_e = length / n
    # nominal turn rate sampled at each step midpoint
    bounds = np.cumsum([0.0] + [s for _, s in segments])
    rates = {"L": 1.0 / r, "S": 0.0, "R": -1.0 / r}
    mids = (np.arange(n) + 0.5) * dt_e
    seg_idx = np.minimum(np.searchsorted(bounds, mids, side="right") - 1, 2)
    u = np.array([rates[segments[j][0]] for j in seg_idx])
    # minimum-norm shooting over per-step rates and the step length, so the
    # Euler rollout hits xb exactly; turning alone cannot remove the
    # longitudinal chord-versus-arc discrepancy
    uc = u.copy()
    dt_min = 0.25 * dt_e
    best = None
    for _ in range(80):
        theta = np.empty(n + 1)
        theta[0] = xa[2]
        theta[1:] = xa[2] + dt_e * np.cumsum(uc)
        cos_t = np.cos(theta[:-1])
        sin_t = np.sin(theta[:-1])
        end = np.array(
            [
                xa[0] + dt_e * np.sum(cos_t),
                xa[1] + dt_e * np.sum(sin_t),
                theta[n],
            ]
        )
        res = np.array(
            [
                end[0] - xb[0],
                end[1] - xb[1],
                float(wrap_angle(end[2] - xb[2])),
            ]
        )
        err = float(np.linalg.norm(res))
        if best is None or err < best[0]:
            best = (err, uc.copy(), dt_e)
        if err < 1e-11:
            break
        # position step j uses theta_j, which depends on u_k only for k < j
        suf_sin = np.zeros(n)
        suf_cos = np.zeros(n)
        if n > 1:
            suf_sin[: n - 1] = np.cumsum(sin_t[1:][::-1])[::-1]
            suf_cos[: n - 1] = np.cumsum(cos_t[1:][::-1])[::-1]
        rel = theta[:-1] - xa[2]
        jac = np.empty((3, n + 1))
        jac[0, :n] = -dt_e * dt_e * suf_sin
        jac[1, :n] = dt_e * dt_e * suf_cos
        jac[2, :n] = dt_e
        jac[0, n] = np.sum(cos_t) - np.sum(sin_t * rel)
        jac[1, n] = np.sum(sin_t) + np.sum(cos_t * rel)
        jac[2, n] = (theta[n] - xa[2]) / dt_e
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        if not np.all(np.isfinite(step)):
            break
        scale = 1.0
        while scale > 1e-4:
            dt_trial = dt_e + scale * step[n]
            if dt_trial >= dt_min and _dubins_endpoint_error(
                xa, xb, uc + scale * step[:n], dt_trial
            ) < err:
                uc = uc + scale * step[:n]
                dt_e = dt_trial
                break
            scale *= 0.5
        else:
            break
    err, uc, dt_e = best
    if _dubins_endpoint_error(xa, xb, uc, dt_e) > 1e-7:
        raise SteeringError("Dubins discretization failed to converge")
    states = np.empty((n + 1, 3))
    states[0] = xa
    x = xa
    for k in range(n):
        x = dubins_step(x, uc[k], dt_e)
        states[k + 1] = x
    controls = uc.reshape(-1, 1)
    return _finalize_edge(model, states, controls, length, dt_e)


def _dubins_endpoint_error(xa, xb, u, dt_e):
    n = len(u)
    theta = xa[2] + dt_e * np.concatenate(([0.0], np.cumsum(u)))
    ex = xa[0] + dt_e * np.sum(np.cos(theta[:-1])) - xb[0]
    ey = xa[1] + dt_e * np.sum(np.sin(theta[:-1])) - xb[1]
    et = float(wrap_angle(theta[n] - xb[2]))
    return math.hypot(math.hypot(ex, ey), et)


def edge_dt(model, edge):
    """Per-step duration of an edge (Dubins edges carry their own)."""
    if edge.ltv_steps:
        return edge.ltv_steps[0].dt
    return model.dt


def simulate_closed_loop(model, edge, scenario, x_true0, x_est0, rng, p_tilde0):
    """Roll out one noisy closed-loop traversal of an edge.

    x_est0 is the filter's initial estimate of the error state (deviation
    from the nominal). Measurement noise is resolved from the scenario at
    each nominal position. Returns (true_states, estimated_error_states),
    each with one row per nominal state.
    """
    n = edge.n_steps
    nom = edge.nominal_states
    truth = np.empty((n + 1, model.n_x))
    est = np.empty((n + 1, model.n_x))
    x = np.asarray(x_true0, dtype=float).copy()
    xhat = np.asarray(x_est0, dtype=float).copy()
    pt = np.asarray(p_tilde0, dtype=float).copy()
    truth[0] = x
    est[0] = xhat
    eye = np.eye(model.n_x)
    for k in range(n):
        step = edge.ltv_steps[k]
        kk = edge.gains[k]
        du = kk @ xhat
        u = edge.nominal_controls[k] + du
        w = rng.standard_normal(step.G.shape[1])
        if model.kind == DOUBLE_INTEGRATOR:
            x = step.A @ x + step.B @ u + step.G @ w
        else:
            x = dubins_step(x, float(u[0]), step.dt) + step.G @ w
            x[2] = float(wrap_angle(x[2]))
        d = scenario.measurement_noise_at(nom[k + 1, :2])
        v = rng.standard_normal(d.shape[1])
        err = x - nom[k + 1]
        if model.kind == DUBINS:
            err[2] = float(wrap_angle(err[2]))
        y = step.C @ err + d @ v
        # filter predict on the error dynamics, then measurement update
        xm = step.A @ xhat + step.B @ du
        ptm = step.A @ pt @ step.A.T + step.G @ step.G.T
        s = step.C @ ptm @ step.C.T + d @ d.T
        gain = np.linalg.solve(s.T, (ptm @ step.C.T).T).T
        pt = (eye - gain @ step.C) @ ptm
        pt = 0.5 * (pt + pt.T)
        xhat = xm + gain @ (y - step.C @ xm)
        truth[k + 1] = x
        est[k + 1] = xhat
    return truth, est
