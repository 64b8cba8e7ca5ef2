"""Belief propagation along edges and the belief-node partial order.

A belief node pins an estimated-state covariance P_hat and an estimation
error covariance P_tilde to a graph vertex, together with the cost-to-come c
and a cost-to-go bound h. The total covariance is P = P_hat + P_tilde.
Nodes store P and P_tilde; P_hat is recovered by subtraction.
"""

from dataclasses import dataclass

import numpy as np

from .environment import collision_probabilities

PSD_FLOOR = -1e-9


def clamp_psd(mat, floor=PSD_FLOOR):
    """Symmetrize and clamp tiny negative eigenvalues to zero.

    Raises when an eigenvalue falls below the floor, which signals real
    numerical corruption rather than roundoff.
    """
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    if w[0] < floor:
        raise ValueError(f"matrix eigenvalue {w[0]:.3e} below PSD floor {floor:.1e}")
    if w[0] >= 0.0:
        return sym
    return v @ np.diag(np.clip(w, 0.0, None)) @ v.T


@dataclass
class KalmanStepResult:
    """Covariances after one predict-update cycle plus the filter gain."""

    P: np.ndarray
    P_hat: np.ndarray
    P_tilde: np.ndarray
    L: np.ndarray


def _kalman_core(a, b, g, c, d, k_gain, p_hat, p_tilde):
    """One covariance step; returns (p_hat, p_tilde, p_tilde_minus, gain)."""
    ptm = a @ p_tilde @ a.T + g @ g.T
    s = c @ ptm @ c.T + d @ d.T
    try:
        gain = np.linalg.solve(s.T, (ptm @ c.T).T).T
    except np.linalg.LinAlgError:
        raise ValueError("innovation covariance is singular") from None
    pt = (np.eye(a.shape[0]) - gain @ c) @ ptm
    pt = 0.5 * (pt + pt.T)
    acl = a + b @ k_gain
    ph = acl @ p_hat @ acl.T + gain @ c @ ptm
    ph = 0.5 * (ph + ph.T)
    return ph, pt, ptm, gain


def kalman_step(step, k_gain, p_hat_prev, p_tilde_prev, d=None):
    """Propagate (P_hat, P_tilde) through one LTV step with feedback gain.

    The measurement noise matrix can be supplied via d when the step carries
    none. Returns a KalmanStepResult with symmetrized covariances.
    """
    d_mat = step.D if d is None else d
    if d_mat is None:
        raise ValueError("measurement noise D is not resolved for this step")
    ph, pt, _, gain = _kalman_core(
        step.A, step.B, step.G, step.C, d_mat, k_gain, p_hat_prev, p_tilde_prev
    )
    return KalmanStepResult(P=ph + pt, P_hat=ph, P_tilde=pt, L=gain)


class BeliefNode:
    """One belief at a graph vertex, a node of the planner's belief tree."""

    __slots__ = ("id", "vertex", "P", "P_tilde", "c", "h", "parent", "in_edge",
                 "children")

    def __init__(self, vertex, P, P_tilde, c, h=np.inf, parent=None, in_edge=None):
        self.id = None
        self.vertex = vertex
        self.P = P
        self.P_tilde = P_tilde
        self.c = c
        self.h = h
        self.parent = parent
        self.in_edge = in_edge
        self.children = set()

    @property
    def f(self):
        return self.c + self.h

    def __repr__(self):
        return (f"BeliefNode(id={self.id}, vertex={self.vertex}, c={self.c:.4f}, "
                f"h={self.h})")


def dominates(node_a, node_b, eps=1e-6):
    """Partial order between beliefs at one vertex.

    node_a dominates node_b when its total cost bound f is no worse (up to
    1e-12) and both covariances are no larger in the Loewner sense, with an
    eps slack on the smallest eigenvalue of the differences.
    """
    if node_a.vertex != node_b.vertex:
        raise ValueError("dominance compares beliefs at the same vertex only")
    if node_a.f > node_b.f + 1e-12:
        return False
    if np.min(np.linalg.eigvalsh(node_b.P - node_a.P)) < -eps:
        return False
    if np.min(np.linalg.eigvalsh(node_b.P_tilde - node_a.P_tilde)) < -eps:
        return False
    return True


@dataclass
class Infeasible:
    """Edge propagation rejected by the chance constraint at one step."""

    step_index: int
    probability: float


def _edge_aux(edge):
    """Per-edge arrays reused by every propagation along the edge."""
    if edge._prop_aux is None:
        steps = edge.ltv_steps
        eye = np.eye(steps[0].A.shape[0])
        a_seq = np.stack([s.A for s in steps])
        ggt = np.stack([s.G @ s.G.T for s in steps])
        acl = np.stack([s.A + s.B @ k for s, k in zip(steps, edge.gains)])
        dts = np.array([s.dt for s in steps])
        c_ident = all(
            s.C.shape == eye.shape and np.array_equal(s.C, eye) for s in steps
        )
        edge._prop_aux = (a_seq, ggt, acl, dts, c_ident)
    return edge._prop_aux


def _edge_covariances(edge, node, scenario):
    """Run the covariance recursion along an edge from a starting belief.

    Returns (pos_covs, trace_acc, p_hat, p_tilde): the per-step 2x2 position
    marginals of the total covariance, the time-integrated trace of the
    total covariance, and the final covariance pair.
    """
    p_tilde = node.P_tilde
    p_hat = clamp_psd(node.P - node.P_tilde)
    n = edge.n_steps
    positions = edge.nominal_states[1:, :2]
    a_seq, ggt, acl, dts, c_ident = _edge_aux(edge)
    d_info2, d_default2 = scenario.noise_products()
    info_mask = scenario.positions_in_info_region(positions)
    pos_covs = np.empty((n, 2, 2))
    trace_acc = 0.0
    for k in range(n):
        if c_ident:
            a = a_seq[k]
            ptm = a @ p_tilde @ a.T + ggt[k]
            s_mat = ptm + (d_info2 if info_mask[k] else d_default2)
            try:
                l_ptm = np.linalg.solve(s_mat, ptm).T @ ptm
            except np.linalg.LinAlgError:
                raise ValueError("innovation covariance is singular") from None
            p_tilde = ptm - l_ptm
            p_tilde = 0.5 * (p_tilde + p_tilde.T)
            m = acl[k]
            p_hat = m @ p_hat @ m.T + l_ptm
            p_hat = 0.5 * (p_hat + p_hat.T)
        else:
            step = edge.ltv_steps[k]
            d = scenario.noise.D_info if info_mask[k] else scenario.noise.D_default
            p_hat, p_tilde, _, _ = _kalman_core(
                step.A, step.B, step.G, step.C, d, edge.gains[k], p_hat, p_tilde
            )
        p_total = p_hat + p_tilde
        trace_acc += float(np.trace(p_total)) * float(dts[k])
        pos_covs[k] = p_total[:2, :2]
    return pos_covs, trace_acc, p_hat, p_tilde


def edge_step_probabilities(edge, node, scenario, n_samples, rng):
    """Fresh Monte-Carlo collision estimates at every step of an edge.

    Used to audit a finished plan: unlike propagate_edge this never stops
    early and always evaluates all steps.
    """
    if edge.n_steps == 0:
        return np.zeros(0)
    pos_covs, _, _, _ = _edge_covariances(edge, node, scenario)
    return collision_probabilities(
        edge.nominal_states[1:, :2], pos_covs, scenario, n_samples, rng
    )


_CHECK_BLOCK = 8


def propagate_edge(edge, node, scenario, chance, rng, lambda_p=0.1):
    """Propagate a belief along an edge, checking the chance constraint.

    Returns a new BeliefNode at edge.to_vertex (id unassigned, h unset) or
    an Infeasible record naming the first violating step. The cost-to-come
    adds the edge's nominal cost plus lambda_p times the time-integrated
    trace of the total covariance over the edge's own steps.

    Covariances and collision checks run in blocks of checked steps so a
    violating edge stops early; the Monte-Carlo draws for the steps that do
    get checked are identical to an unblocked evaluation.
    """
    if edge.n_steps == 0:
        return BeliefNode(
            vertex=edge.to_vertex,
            P=node.P,
            P_tilde=node.P_tilde,
            c=node.c,
            parent=node.id,
            in_edge=edge.id,
        )
    n = edge.n_steps
    p_tilde = node.P_tilde
    p_hat = clamp_psd(node.P - node.P_tilde)
    positions = edge.nominal_states[1:, :2]
    a_seq, ggt, acl, dts, c_ident = _edge_aux(edge)
    d_info2, d_default2 = scenario.noise_products()
    info_mask = scenario.positions_in_info_region(positions)
    checked = np.arange(1, n + 1)
    stride = chance.check_stride
    if stride > 1:
        checked = checked[(checked % stride == 0) | (checked == n)]
    trace_acc = 0.0
    k = 0
    for blk in range(0, len(checked), _CHECK_BLOCK):
        blk_checked = checked[blk:blk + _CHECK_BLOCK]
        upto = int(blk_checked[-1])
        pos_covs = np.empty((upto - k, 2, 2))
        base = k
        while k < upto:
            if c_ident:
                a = a_seq[k]
                ptm = a @ p_tilde @ a.T + ggt[k]
                s_mat = ptm + (d_info2 if info_mask[k] else d_default2)
                try:
                    l_ptm = np.linalg.solve(s_mat, ptm).T @ ptm
                except np.linalg.LinAlgError:
                    raise ValueError(
                        "innovation covariance is singular"
                    ) from None
                p_tilde = ptm - l_ptm
                p_tilde = 0.5 * (p_tilde + p_tilde.T)
                m = acl[k]
                p_hat = m @ p_hat @ m.T + l_ptm
                p_hat = 0.5 * (p_hat + p_hat.T)
            else:
                step = edge.ltv_steps[k]
                d = (
                    scenario.noise.D_info
                    if info_mask[k]
                    else scenario.noise.D_default
                )
                p_hat, p_tilde, _, _ = _kalman_core(
                    step.A, step.B, step.G, step.C, d, edge.gains[k],
                    p_hat, p_tilde,
                )
            p_total = p_hat + p_tilde
            trace_acc += float(np.trace(p_total)) * float(dts[k])
            pos_covs[k - base] = p_total[:2, :2]
            k += 1
        probs = collision_probabilities(
            positions[blk_checked - 1], pos_covs[blk_checked - 1 - base],
            scenario, chance.mc_samples, rng,
        )
        bad = np.flatnonzero(probs >= chance.delta)
        if bad.size:
            i = int(bad[0])
            return Infeasible(
                step_index=int(blk_checked[i]), probability=float(probs[i])
            )
    cost = node.c + edge.nominal_cost + lambda_p * trace_acc
    return BeliefNode(
        vertex=edge.to_vertex,
        P=clamp_psd(p_hat + p_tilde),
        P_tilde=clamp_psd(p_tilde),
        c=cost,
        parent=node.id,
        in_edge=edge.id,
    )
