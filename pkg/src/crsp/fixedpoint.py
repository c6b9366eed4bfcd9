"""Constrained RSP by fixed-point iteration on free energies.

Unconstrained nodes use a softmin over successors, constrained nodes the
expected-cost average under their fixed distribution, and the goal is pinned
to zero. Updates are synchronous (the whole vector is replaced per iteration).

Stopping uses the a-posteriori bound ``r_k rho / (1 - rho)`` on the distance to
the fixed point, with ``rho`` estimated from successive residuals, so ``tol``
bounds the error in ``phi`` rather than just the last step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .engine import (
    RspParams,
    RspSolution,
    expected_cost,
    masked_costs,
    path_entropies,
    policy_flows,
    policy_from_phi,
    softmin_rows,
)
from .errors import MaxIterExceeded
from .graph import ConstraintSpec, Graph, ReferenceChain

log = logging.getLogger(__name__)

BURN_IN = 5


@dataclass
class FixedPointState:
    phi: np.ndarray
    residual: float
    iterations: int


def fixedpoint_step(phi, p_ref, C, cmask, goal, theta):
    """One synchronous application of the constrained free-energy recurrence."""
    X = C + phi[None, :]
    new = softmin_rows(X, p_ref, theta)
    lin = np.sum(np.where(p_ref > 0, p_ref * X, 0.0), axis=1)
    new[cmask] = lin[cmask]
    new[goal] = 0.0
    return new


def converged_by_rate(residual, prev, phi, tol):
    # round-off floor: steps this small are noise and carry no rate information
    if residual <= 64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(phi)))):
        return True
    if residual >= tol:
        return False
    rate = residual / prev if prev > 0 else 0.0
    return rate < 1.0 and residual * rate / (1.0 - rate) < tol


def iterate_fixedpoint(g: Graph, rc: ReferenceChain, cs: ConstraintSpec, params: RspParams,
                       phi0=None, residuals=None) -> FixedPointState:
    """Run the recurrence to convergence; optionally record every residual."""
    p_ref = rc.p_ref
    C = masked_costs(p_ref, g.costs)
    cmask = cs.mask(g.n)
    phi = np.zeros(g.n) if phi0 is None else np.array(phi0, dtype=float)
    phi[g.goal] = 0.0
    residual = np.inf
    history = [] if residuals is None else residuals
    prev = np.inf
    for it in range(1, params.max_iter + 1):
        new = fixedpoint_step(phi, p_ref, C, cmask, g.goal, params.theta)
        residual = float(np.max(np.abs(new - phi)))
        history.append(residual)
        phi = new
        if converged_by_rate(residual, prev, phi, params.tol):
            break
        prev = residual
    else:
        raise MaxIterExceeded(params.max_iter, residual)
    if np.any(phi < 0):
        log.warning("negative free energy encountered (min %.3g)", phi.min())
    grows = [k for k in range(BURN_IN + 1, len(history)) if history[k] > history[k - 1] * (1 + 1e-9)
             and history[k] > 1e3 * np.finfo(float).eps]
    if grows:
        log.warning("residual increased at %d iterations after burn-in", len(grows))
    return FixedPointState(phi=phi, residual=residual, iterations=it)


def solve_constrained_fixedpoint(g: Graph, rc: ReferenceChain, cs: ConstraintSpec,
                                 params: RspParams, phi0=None) -> RspSolution:
    """Optimal constrained policy from the converged free energies."""
    state = iterate_fixedpoint(g, rc, cs, params, phi0=phi0)
    phi = state.phi
    P = policy_from_phi(rc.p_ref, g.costs, phi, params.theta, g.goal)
    for i in cs.constrained:
        P[i] = cs.q[i]
    edge, node = policy_flows(P, g.source, g.goal)
    rel, total = path_entropies(P, rc.p_ref, node, g.goal)
    with np.errstate(under="ignore"):
        z = np.exp(-params.theta * phi)
    return RspSolution(
        z_b=z, phi=phi, policy=P, edge_flows=edge, node_flows=node,
        expected_cost=expected_cost(edge, g.costs), rel_entropy=rel, total_entropy=total,
        iterations=state.iterations, converged=True, residual=state.residual,
        solver="fixedpoint", theta=params.theta, source=g.source, goal=g.goal,
    )


def jacobian(g: Graph, rc: ReferenceChain, cs: ConstraintSpec, phi, theta):
    """Jacobian of the recurrence at ``phi``: softmax weights on unconstrained rows,
    reference rows on constrained rows, zero goal row."""
    p_ref = rc.p_ref
    J = policy_from_phi(p_ref, g.costs, np.asarray(phi, dtype=float), theta, g.goal)
    for i in cs.constrained:
        J[i] = p_ref[i]
    J[g.goal] = 0.0
    return J


def spectral_radius_estimate(J, iterations=None):
    """Power-iteration estimate of rho(J) for a non-negative matrix.

    Uses ``||J^k 1||_inf^(1/k)`` (Gelfand), renormalizing each step. For
    non-negative J this equals ``||J^k||_inf^(1/k)``, an upper bound on rho that
    converges to it, and it does not oscillate on periodic (e.g. bipartite)
    structures the way the plain growth ratio does. Returns 0 if J is nilpotent.
    """
    n = J.shape[0]
    k_max = iterations or max(50 * n, 2000)
    v = np.ones(n)
    log_norm = 0.0
    for k in range(1, k_max + 1):
        v = J @ v
        nv = np.max(np.abs(v))
        if nv == 0.0:
            return 0.0
        log_norm += np.log(nv)
        v /= nv
    return float(np.exp(log_norm / k_max))


def jacobian_spectral_check(g: Graph, rc: ReferenceChain, cs: ConstraintSpec, phi, theta):
    """``(rho_estimate, substochastic)`` for the recurrence Jacobian at ``phi``.

    ``substochastic`` requires non-negative entries, non-goal row sums equal to 1
    and a goal row summing to less than 1.
    """
    J = jacobian(g, rc, cs, phi, theta)
    sums = J.sum(axis=1)
    others = np.arange(g.n) != g.goal
    sub = bool(np.all(J >= 0) and np.all(np.abs(sums[others] - 1.0) <= 1e-12)
               and sums[g.goal] < 1.0)
    return spectral_radius_estimate(J), sub
