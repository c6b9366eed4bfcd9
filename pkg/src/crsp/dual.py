"""Constrained RSP by block-coordinate ascent on the Lagrange dual.

Each constrained node is one block. Its augmented-cost row is set to the
closed-form maximizer ``c'_ij = sum_k p_ik (c_ik + phi_k) - phi_j`` using free
energies from a fresh backward solve, then the next node is processed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .engine import (
    RspParams,
    RspSolution,
    backward_variables,
    build_w,
    expected_cost,
    optimal_policy,
    path_entropies,
    policy_flows,
    masked_costs,
    shifted_backward,
    shortest_distances,
    solve_rsp,
)
from .errors import NotAbsorbing
from .errors import MaxIterExceeded, UnderflowAtTheta, ZeroGamma
from .graph import ConstraintSpec, Graph, ReferenceChain

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
MAX_SWEEPS = 500


@dataclass
class AugmentedCosts:
    c_prime: np.ndarray
    delta: np.ndarray
    lam: np.ndarray


@dataclass
class DualTrace:
    """Per-sweep diagnostics; index k holds the state after sweep k+1."""

    initial_dual: float = float("nan")
    dual: list = field(default_factory=list)
    constraint_residual: list = field(default_factory=list)
    centering: list = field(default_factory=list)
    phi_change: list = field(default_factory=list)


def solve_logistic_system(gamma, q, theta):
    """Centered solution of ``gamma_i e^{-theta x_i} / sum_j gamma_j e^{-theta x_j} = q_i``.

    Entries with ``q_i = 0`` are left at 0; they play no part in the system.
    """
    gamma = np.asarray(gamma, dtype=float)
    q = np.asarray(q, dtype=float)
    sup = q > 0
    if np.any(gamma[sup] <= 0):
        raise ZeroGamma("gamma must be positive wherever q is")
    r = np.log(q[sup] / gamma[sup])
    x = np.zeros_like(q)
    x[sup] = -(r - np.dot(q[sup], r)) / theta
    return x


def update_augmented_costs(i, phi, p_ref, costs):
    """Closed-form block update for constrained node ``i``; returns the new row."""
    sup = p_ref[i] > 0
    c = masked_costs(p_ref, costs)[i]
    target = c + phi
    mean = np.dot(p_ref[i, sup], target[sup])
    row = np.array(costs[i], dtype=float)
    row[sup] = mean - phi[sup]
    return row


def dual_objective(W, goal, source, theta):
    """``-T log Z'`` evaluated for the augmented weights ``W``."""
    z = backward_variables(W, goal)
    return -np.log(z[source]) / theta


def augmented_from_lambda(costs, cs: ConstraintSpec, lam):
    """``c'_ij = c_ij + lam_ij - sum_k q_ik lam_ik`` on constrained rows."""
    cp = np.array(costs, dtype=float)
    for i in cs.constrained:
        q = cs.q[i]
        sup = q > 0
        cp[i, sup] = costs[i, sup] + lam[i, sup] - np.dot(q[sup], lam[i, sup])
    return cp


def dual_value(g: Graph, rc: ReferenceChain, cs: ConstraintSpec, lam, theta):
    """Dual function at multipliers ``lam`` (full n x n array, read on constrained rows)."""
    W, _ = build_w(rc.p_ref, augmented_from_lambda(g.costs, cs, lam), theta)
    return dual_objective(W, g.goal, g.source, theta)


def dual_gradient(g: Graph, rc: ReferenceChain, cs: ConstraintSpec, lam, theta):
    """Analytic gradient ``n_ij - q_ij n_i`` on constrained rows (zeros elsewhere)."""
    W, _ = build_w(rc.p_ref, augmented_from_lambda(g.costs, cs, lam), theta)
    z = backward_variables(W, g.goal)
    P = optimal_policy(W, z, g.goal)
    edge, node = policy_flows(P, g.source, g.goal)
    grad = np.zeros_like(W)
    for i in cs.constrained:
        grad[i] = edge[i] - cs.q[i] * node[i]
    return grad


def _constraint_residual(P, cs):
    if not cs.constrained:
        return 0.0
    return max(float(np.max(np.abs(P[i] - cs.q[i]))) for i in cs.constrained)


def _centering(cp_row, c_row, q):
    sup = q > 0
    return abs(float(np.dot(q[sup], cp_row[sup] - c_row[sup])))


def _backward(p_ref, cp, g, theta, shift):
    """Rescaled backward solve; a breakdown here means theta is too large."""
    try:
        Wt, y, phi = shifted_backward(p_ref, cp, theta, g.goal, shift)
    except NotAbsorbing as exc:
        raise UnderflowAtTheta(theta) from exc
    if not np.all(np.isfinite(phi)):
        raise UnderflowAtTheta(theta)
    return Wt, y, phi


def solve_constrained_dual(g: Graph, rc: ReferenceChain, cs: ConstraintSpec,
                           params: RspParams, tol=DEFAULT_TOL, max_sweeps=MAX_SWEEPS,
                           order=None):
    """Optimal constrained policy by block-coordinate dual ascent.

    Parameters
    ----------
    tol : float
        Convergence threshold on the max change of the free-energy vector
        between two sweeps.
    order : sequence of int, optional
        Node visiting order within a sweep; ascending node index by default.

    Returns
    -------
    (RspSolution, AugmentedCosts, DualTrace)
    """
    theta = params.theta
    p_ref, costs = rc.p_ref, g.costs
    if not cs.constrained:
        sol = solve_rsp(g, rc, params)
        zeros = np.zeros_like(costs)
        trace = DualTrace(initial_dual=sol.free_energy_source)
        return sol, AugmentedCosts(np.array(costs), zeros, zeros.copy()), trace
    order = sorted(cs.constrained) if order is None else list(order)
    active = [i for i in order if np.count_nonzero(p_ref[i] > 0) > 1]
    cp = np.array(costs, dtype=float)
    trace = DualTrace()

    W, z, phi = _backward(p_ref, cp, g, theta, shortest_distances(p_ref, costs, g.goal))
    trace.initial_dual = float(phi[g.source])
    sweeps, converged = 0, not active
    change = 0.0
    while not converged:
        if sweeps >= max_sweeps:
            raise MaxIterExceeded(sweeps, change, trace)
        sweeps += 1
        phi_prev = phi
        centering = 0.0
        for i in active:
            W, z, phi = _backward(p_ref, cp, g, theta, phi)
            cp[i] = update_augmented_costs(i, phi, p_ref, costs)
            centering = max(centering, _centering(cp[i], costs[i], cs.q[i]))
        W, z, phi = _backward(p_ref, cp, g, theta, phi)
        change = float(np.max(np.abs(phi - phi_prev)))
        P = optimal_policy(W, z, g.goal)
        trace.dual.append(float(phi[g.source]))
        trace.constraint_residual.append(_constraint_residual(P, cs))
        trace.centering.append(centering)
        trace.phi_change.append(change)
        log.debug("sweep %d: dual=%.12g dphi=%.3e resid=%.3e", sweeps,
                  phi[g.source], change, trace.constraint_residual[-1])
        converged = change < tol

    P = optimal_policy(W, z, g.goal)
    residual = _constraint_residual(P, cs)
    for i in cs.constrained:
        P[i] = cs.q[i]
    edge, node = policy_flows(P, g.source, g.goal)
    rel, total = path_entropies(P, p_ref, node, g.goal)

    delta = np.zeros_like(cp)
    lam = np.zeros_like(cp)
    C = masked_costs(p_ref, costs)
    for i in cs.constrained:
        sup = p_ref[i] > 0
        delta[i, sup] = cp[i, sup] - costs[i, sup]
        lam[i, sup] = -(C[i, sup] + phi[sup])
    aug = AugmentedCosts(c_prime=cp, delta=delta, lam=lam)

    with np.errstate(under="ignore"):
        z_b = np.exp(-theta * phi)
    sol = RspSolution(
        z_b=z_b, phi=phi, policy=P, edge_flows=edge, node_flows=node,
        expected_cost=expected_cost(edge, costs), rel_entropy=rel, total_entropy=total,
        iterations=sweeps, converged=True, residual=change, solver="dual", theta=theta,
        source=g.source, goal=g.goal,
        extra={"constraint_residual": residual},
    )
    return sol, aug, trace

