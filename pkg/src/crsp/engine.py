"""Standard (unconstrained) randomized shortest-path quantities.

Everything here works on dense ``n x n`` arrays. Costs are masked by the
reference support (``p_ref > 0``); entries off the support are never read.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from scipy.sparse import csgraph

from .errors import MaxIterExceeded, NotAbsorbing

log = logging.getLogger(__name__)

DENSE_LIMIT = 4096
TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class RspParams:
    theta: float
    tol: float = 1e-10
    max_iter: int = 100_000

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @property
    def temperature(self) -> float:
        return 1.0 / self.theta


@dataclass
class RspSolution:
    """Solved RSP system. Arrays are indexed by 0-based node id."""

    z_b: np.ndarray
    phi: np.ndarray
    policy: np.ndarray
    edge_flows: np.ndarray
    node_flows: np.ndarray
    expected_cost: float
    rel_entropy: float
    total_entropy: float
    iterations: int = 0
    converged: bool = True
    residual: float = 0.0
    solver: str = "linear"
    theta: float = float("nan")
    source: int = 0
    goal: int = -1
    extra: dict = field(default_factory=dict)

    @property
    def partition_function(self) -> float:
        return float(self.z_b[self.source])

    @property
    def free_energy_source(self) -> float:
        return float(self.phi[self.source])


# ---------------------------------------------------------------------------
# building blocks


def masked_costs(p_ref, costs):
    """Costs with entries off the reference support replaced by 0 (never read)."""
    return np.where(p_ref > 0, costs, 0.0)


def build_w(p_ref, costs, theta):
    """Return ``(W, underflow)`` with ``W = P_ref o exp(-theta C)``.

    ``underflow`` is True when some edge weight vanished or went subnormal,
    i.e. the linear-algebra route is no longer trustworthy at this theta.
    """
    support = p_ref > 0
    W = np.where(support, p_ref * np.exp(-theta * masked_costs(p_ref, costs)), 0.0)
    underflow = bool(np.any(W[support] < TINY))
    return W, underflow


def _solve(M, b):
    n = M.shape[0]
    if n > DENSE_LIMIT:
        x = scipy.sparse.linalg.spsolve(scipy.sparse.csc_matrix(M), b)
        if not np.all(np.isfinite(x)):
            raise NotAbsorbing("sparse solve produced non-finite values")
        return x
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(M, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotAbsorbing(str(exc)) from exc
    if np.any(np.diag(lu[0]) == 0):
        raise NotAbsorbing("singular system: goal unreachable under W's support")
    return scipy.linalg.lu_solve(lu, b)


def backward_variables(W, goal):
    """Solve ``(I - W) z = e_goal``; ``z_i`` sums weights of hitting paths i -> goal."""
    n = W.shape[0]
    e = np.zeros(n)
    e[goal] = 1.0
    with np.errstate(all="ignore"):
        z = _solve(np.eye(n) - W, e)
    if not np.all(np.isfinite(z)) or np.any(z <= 0):
        raise NotAbsorbing("backward variables not strictly positive")
    z[goal] = 1.0
    return z


def forward_variables(W, source):
    """Row ``source`` of the fundamental matrix, via ``(I - W)^T f = e_source``."""
    n = W.shape[0]
    e = np.zeros(n)
    e[source] = 1.0
    with np.errstate(all="ignore"):
        f = _solve((np.eye(n) - W).T, e)
    if not np.all(np.isfinite(f)):
        raise NotAbsorbing("forward variables not finite")
    return np.maximum(f, 0.0)


def shortest_distances(p_ref, costs, goal):
    """Least-cost distances to ``goal`` over the reference support (Dijkstra)."""
    C = np.where(p_ref > 0, masked_costs(p_ref, costs), np.inf)
    G = csgraph.csgraph_from_dense(C.T, null_value=np.inf)
    return csgraph.dijkstra(G, directed=True, indices=goal)


def shifted_weights(p_ref, costs, theta, shift):
    """``p_ij exp(-theta (c_ij + d_j - d_i))``: W conjugated by ``diag(exp(-theta d))``."""
    support = p_ref > 0
    x = masked_costs(p_ref, costs) + shift[None, :] - shift[:, None]
    with np.errstate(under="ignore", over="ignore"):
        return np.where(support, p_ref * np.exp(-theta * np.where(support, x, 0.0)), 0.0)


def shifted_backward(p_ref, costs, theta, goal, shift):
    """Free energies through the rescaled system ``(I - W~) y = e_goal``.

    With ``z = exp(-theta d) * y`` and ``d_goal = 0`` this is the backward system
    for ``W``, but stays well scaled when ``d`` is close to the free energy
    (e.g. least-cost distances or a previous solution), even where ``z`` itself
    would underflow. Returns ``(W~, y, phi)``; ``optimal_policy(W~, y, goal)``
    equals the policy built from ``W`` and ``z``.
    """
    shift = np.array(shift, dtype=float)
    shift[goal] = 0.0
    Wt = shifted_weights(p_ref, costs, theta, shift)
    n = Wt.shape[0]
    e = np.zeros(n)
    e[goal] = 1.0
    with np.errstate(all="ignore"):
        y = _solve(np.eye(n) - Wt, e)
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise NotAbsorbing("rescaled backward variables not strictly positive")
    y[goal] = 1.0
    phi = shift - np.log(y) / theta
    phi[goal] = 0.0
    return Wt, y, phi


def free_energy(z_b, theta, goal=None):
    phi = -np.log(z_b) / theta
    if goal is not None:
        phi[goal] = 0.0
    return phi


def optimal_policy(W, z_b, goal):
    """Biased transition matrix ``p*_ij = w_ij z_j / sum_k w_ik z_k``; goal row zero."""
    num = W * z_b[None, :]
    s = num.sum(axis=1)
    P = np.zeros_like(W)
    rows = s > 0
    P[rows] = num[rows] / s[rows, None]
    P[goal] = 0.0
    return P


def policy_from_phi(p_ref, costs, phi, theta, goal):
    """Multinomial-logistic policy from free energies, evaluated with a max-shift."""
    support = p_ref > 0
    x = np.where(support, masked_costs(p_ref, costs) + phi[None, :], np.inf)
    m = x.min(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(under="ignore"):
        num = np.where(support, p_ref * np.exp(-theta * (x - m)), 0.0)
    s = num.sum(axis=1, keepdims=True)
    P = np.divide(num, s, out=np.zeros_like(num), where=s > 0)
    P[goal] = 0.0
    return P


def edge_node_flows(W, z_f, z_b, source, goal):
    """Expected edge passages ``z_si w_ij z_j / Z`` and node visits ``z_si z_i / Z``."""
    Z = z_b[source]
    edge = z_f[:, None] * W * z_b[None, :] / Z
    edge[goal] = 0.0
    node = z_f * z_b / Z
    node[goal] = 1.0
    return edge, node


def policy_flows(policy, source, goal):
    """Flows of the absorbing chain driven by ``policy`` started at ``source``."""
    n = policy.shape[0]
    P = policy.copy()
    P[goal] = 0.0
    e = np.zeros(n)
    e[source] = 1.0
    node = _solve((np.eye(n) - P).T, e)
    if not np.all(np.isfinite(node)):
        raise NotAbsorbing("policy chain does not absorb")
    node = np.maximum(node, 0.0)
    node[goal] = 1.0
    edge = node[:, None] * P
    return edge, node


def expected_cost(edge_flows, costs):
    """Sum of ``n_ij c_ij`` over edges carrying flow."""
    mask = edge_flows > 0
    return float(np.sum(edge_flows[mask] * costs[mask]))


def _xlogy_rows(p, q=None):
    with np.errstate(divide="ignore", invalid="ignore"):
        if q is None:
            t = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
        else:
            t = np.where(p > 0, p * np.log(np.where(p > 0, p / np.where(q > 0, q, 1.0), 1.0)), 0.0)
    return t.sum(axis=1)


def local_entropies(policy):
    """Per-node Shannon entropy of the outgoing distribution."""
    return -_xlogy_rows(policy)


def path_entropies(policy, p_ref, node_flows, goal):
    """``(J(P*|pi), J(P*))`` as visit-weighted sums of local KL / entropy."""
    w = node_flows.copy()
    w[goal] = 0.0
    rel = float(np.dot(w, _xlogy_rows(policy, p_ref)))
    total = float(np.dot(w, local_entropies(policy)))
    return rel, total


def relative_entropy_from_partition(log_z, expected, theta):
    """``-(log Z + theta <c>)``: relative path entropy from the partition function."""
    return -(log_z + theta * expected)


def softmin(x, q, theta):
    """Weighted softmin ``-(1/theta) log sum_i q_i exp(-theta x_i)``.

    Entries with ``q_i = 0`` are ignored (they may be ``inf``). The exponent is
    shifted by the minimum over the support so the result never under/overflows.
    """
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    sup = q > 0
    xs, qs = x[sup], q[sup]
    m = xs.min()
    return float(m - np.log(np.dot(qs, np.exp(-theta * (xs - m)))) / theta)


def softmin_rows(X, Q, theta):
    """Row-wise :func:`softmin`; rows with empty support return 0."""
    sup = Q > 0
    Xs = np.where(sup, X, np.inf)
    m = Xs.min(axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        e = np.where(sup, Q * np.exp(-theta * (np.where(sup, X, 0.0) - m[:, None])), 0.0)
    s = e.sum(axis=1)
    out = np.zeros(X.shape[0])
    ok = s > 0
    out[ok] = m[ok] - np.log(s[ok]) / theta
    return out


def soft_bellman_ford(p_ref, costs, goal, params, phi0=None, return_info=False):
    """Iterate ``phi_i <- softmin_j(c_ij + phi_j)`` (Jacobi sweeps), ``phi_goal = 0``.

    Never forms W, so it is safe at any theta. Raises :class:`MaxIterExceeded`.
    """
    n = p_ref.shape[0]
    C = masked_costs(p_ref, costs)
    phi = np.zeros(n) if phi0 is None else np.array(phi0, dtype=float)
    phi[goal] = 0.0
    residual = np.inf
    for it in range(1, params.max_iter + 1):
        new = softmin_rows(C + phi[None, :], p_ref, params.theta)
        new[goal] = 0.0
        residual = float(np.max(np.abs(new - phi)))
        phi = new
        if residual < params.tol:
            break
    else:
        raise MaxIterExceeded(params.max_iter, residual)
    if return_info:
        return phi, it, residual
    return phi


# ---------------------------------------------------------------------------
# full solve


def solve_rsp(g, rc, params, costs=None) -> RspSolution:
    """Standard RSP solve on ``g`` (optionally with replacement ``costs``).

    The backward and forward systems are solved after conjugating W by
    ``diag(exp(-theta d))`` with ``d`` the least-cost distances, which keeps
    them well scaled at large theta; flows and policy are invariant under this
    change of basis. If that still breaks down, the log-domain soft
    Bellman-Ford iteration is used instead.
    """
    costs = g.costs if costs is None else costs
    p_ref = rc.p_ref
    theta = params.theta
    solver, iters, resid = "linear", 0, 0.0
    try:
        Wt, y, phi = shifted_backward(p_ref, costs, theta, g.goal,
                                      shortest_distances(p_ref, costs, g.goal))
        f = forward_variables(Wt, g.source)
        policy = optimal_policy(Wt, y, g.goal)
        edge, node = edge_node_flows(Wt, f, y, g.source, g.goal)
    except NotAbsorbing:
        log.info("linear route failed at theta=%g; using soft Bellman-Ford", theta)
        solver = "soft-bellman-ford"
        phi, iters, resid = soft_bellman_ford(p_ref, costs, g.goal, params, return_info=True)
        policy = policy_from_phi(p_ref, costs, phi, theta, g.goal)
        edge, node = policy_flows(policy, g.source, g.goal)
    with np.errstate(under="ignore"):
        z_b = np.exp(-theta * phi)
    rel, total = path_entropies(policy, p_ref, node, g.goal)
    return RspSolution(
        z_b=z_b, phi=phi, policy=policy, edge_flows=edge, node_flows=node,
        expected_cost=expected_cost(edge, costs), rel_entropy=rel, total_entropy=total,
        iterations=iters, residual=resid, solver=solver, theta=theta,
        source=g.source, goal=g.goal,
    )
