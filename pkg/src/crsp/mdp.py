"""Stochastic shortest-path MDPs: bipartite reduction and (soft) value iteration.

Actions are stored flat, grouped by owning state. ``table`` pads the per-state
action lists into a ``(n_states, max_actions)`` index matrix (-1 = no action),
which lets every per-state reduction run row-wise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import RspParams, softmin_rows
from .errors import GraphParseError, MaxIterExceeded, NotAbsorbing, ValidationError
from .fixedpoint import converged_by_rate
from .graph import ConstraintSpec, Graph, ReferenceChain, ValidationReport, _read_json

TIE_TOL = 1e-9


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MdpSpec:
    n_states: int
    goal: int
    action_state: np.ndarray
    action_cost: np.ndarray
    env: np.ndarray
    prior: np.ndarray
    action_names: tuple = ()
    outcome_cost: Optional[np.ndarray] = None
    start: int = 0

    def __post_init__(self):
        object.__setattr__(self, "action_state", _frozen(self.action_state, int))
        object.__setattr__(self, "action_cost", _frozen(self.action_cost))
        object.__setattr__(self, "env", _frozen(self.env))
        object.__setattr__(self, "prior", _frozen(self.prior))
        if self.outcome_cost is not None:
            object.__setattr__(self, "outcome_cost", _frozen(self.outcome_cost))
        n_a = len(self.action_state)
        if not self.action_names:
            object.__setattr__(self, "action_names", tuple(str(a) for a in range(n_a)))
        if self.env.shape != (n_a, self.n_states):
            raise ValueError(f"env must have shape ({n_a}, {self.n_states})")
        if np.any(np.diff(self.action_state) < 0):
            raise ValueError("actions must be grouped by state in ascending order")
        rep = validate_mdp(self)
        if not rep.ok:
            raise ValidationError(rep)
        counts = np.bincount(self.action_state, minlength=self.n_states)
        table = -np.ones((self.n_states, max(1, counts.max())), dtype=int)
        for k in range(self.n_states):
            idx = np.flatnonzero(self.action_state == k)
            table[k, :len(idx)] = idx
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def n_actions(self) -> int:
        return len(self.action_state)

    def actions_of(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.action_state == k)

    def q_values(self, values):
        """``c_ka + sum_l p_al v_l`` per action."""
        return self.action_cost + self.env @ values

    def per_state(self, x, fill=0.0):
        """Scatter a per-action vector into the padded per-state table."""
        t = self.table
        return np.where(t >= 0, np.asarray(x)[np.maximum(t, 0)], fill)

    @classmethod
    def from_actions(cls, n_states, goal, actions, start=0, outcome_cost=None):
        """Build from ``{state: [(name, cost, next_dist, prior_or_None), ...]}``.

        ``next_dist`` is a length-``n_states`` vector or ``{state: prob}`` dict.
        A missing prior defaults to uniform over the state's actions.
        """
        owner, cost, env, prior, names = [], [], [], [], []
        for k in sorted(actions):
            acts = actions[k]
            priors = [a[3] if len(a) > 3 else None for a in acts]
            if all(p is None for p in priors):
                priors = [1.0 / len(acts)] * len(acts)
            elif any(p is None for p in priors):
                raise ValueError(f"state {k}: prior given for some actions only")
            for (name, c, nxt, *_), p in zip(acts, priors):
                row = np.zeros(n_states)
                if isinstance(nxt, dict):
                    for l, pr in nxt.items():
                        row[int(l)] += pr
                else:
                    row[:] = nxt
                owner.append(k)
                cost.append(c)
                env.append(row)
                prior.append(p)
                names.append(str(name))
        return cls(n_states, goal, np.array(owner, dtype=int), np.array(cost),
                   np.array(env).reshape(len(owner), n_states), np.array(prior),
                   tuple(names), outcome_cost=outcome_cost, start=start)


@dataclass
class MdpPolicy:
    """Per-action probabilities plus the per-state value vector that produced them."""

    probs: np.ndarray
    values: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    method: str = "soft"
    theta: float = float("nan")


def validate_mdp(mdp: MdpSpec) -> ValidationReport:
    rep = ValidationReport()
    nS = mdp.n_states
    if not 0 <= mdp.goal < nS:
        rep.add("BadGoal", mdp.goal)
        return rep
    if not 0 <= mdp.start < nS:
        rep.add("BadStart", mdp.start)
    if np.any((mdp.action_state < 0) | (mdp.action_state >= nS)):
        rep.add("BadActionOwner")
        return rep
    if np.any(mdp.action_state == mdp.goal):
        rep.add("GoalHasActions", mdp.goal)
    counts = np.bincount(mdp.action_state, minlength=nS)
    for k in range(nS):
        if k != mdp.goal and counts[k] == 0:
            rep.add("NoActions", k)
    if np.any(mdp.action_cost < 0) or not np.all(np.isfinite(mdp.action_cost)):
        rep.add("BadActionCost")
    if np.any(mdp.env < 0):
        rep.add("NegativeProbability")
    for a, s in enumerate(mdp.env.sum(axis=1)):
        if abs(s - 1.0) > 1e-12:
            rep.add("EnvNotStochastic", int(mdp.action_state[a]), f"action {a}: sum {s!r}")
    for k in range(nS):
        idx = np.flatnonzero(mdp.action_state == k)
        if len(idx) and abs(mdp.prior[idx].sum() - 1.0) > 1e-12:
            rep.add("PriorNotStochastic", k)
        if len(idx) and np.any(mdp.prior[idx] <= 0):
            rep.add("PriorNotPositive", k)
    if mdp.outcome_cost is not None and mdp.outcome_cost.shape != mdp.env.shape:
        rep.add("ShapeMismatch", detail="outcome_cost")
    if not rep.ok:
        return rep
    # goal reachability over the state transition support
    reach = np.zeros(nS, dtype=bool)
    reach[mdp.goal] = True
    changed = True
    while changed:
        hit = (mdp.env[:, reach] > 0).any(axis=1)
        new = reach.copy()
        new[mdp.action_state[hit]] = True
        changed = bool((new != reach).any())
        reach = new
    for k in np.flatnonzero(~reach):
        rep.add("Unreachable", int(k))
    return rep


# ---------------------------------------------------------------------------
# reductions and solvers


def to_bipartite(mdp: MdpSpec):
    """States become nodes ``0..n_S-1``, actions ``n_S..n_S+n_A-1``.

    State -> action edges carry the action cost and prior; action -> state edges
    carry zero cost and the environment distribution. Every action node is
    constrained to its environment row.
    """
    nS, nA = mdp.n_states, mdp.n_actions
    n = nS + nA
    adj = np.zeros((n, n))
    costs = np.full((n, n), np.inf)
    acts = nS + np.arange(nA)
    adj[mdp.action_state, acts] = mdp.prior
    costs[mdp.action_state, acts] = mdp.action_cost
    adj[nS:, :nS] = mdp.env
    costs[nS:, :nS] = np.where(mdp.env > 0, 0.0, np.inf)
    g = Graph(adj, costs, goal=mdp.goal, source=mdp.start)
    p = adj.copy()
    p[mdp.goal] = 0.0
    rc = ReferenceChain(p)
    cs = ConstraintSpec(tuple(acts), {int(nS + a): np.concatenate([mdp.env[a], np.zeros(nA)])
                                      for a in range(nA)})
    return g, rc, cs


def _state_softmin(mdp, Q, theta):
    prior_t = mdp.per_state(mdp.prior)
    return softmin_rows(mdp.per_state(Q), prior_t, theta)


def soft_policy(mdp: MdpSpec, values, theta):
    """``p_ka ∝ prior_ka exp(-theta (c_ka + sum_l p_al v_l))`` per state."""
    Q = mdp.q_values(values)
    t = mdp.table
    Qt = np.where(t >= 0, mdp.per_state(Q), np.inf)
    m = Qt.min(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(under="ignore", invalid="ignore"):
        e = np.where(t >= 0, mdp.per_state(mdp.prior) * np.exp(-theta * (Qt - m)), 0.0)
    s = e.sum(axis=1, keepdims=True)
    e = np.divide(e, s, out=np.zeros_like(e), where=s > 0)
    probs = np.zeros(mdp.n_actions)
    probs[t[t >= 0]] = e[t >= 0]
    return probs


def soft_value_iteration(mdp: MdpSpec, params: RspParams, phi0=None) -> MdpPolicy:
    """Value iteration with the min over actions replaced by a prior-weighted softmin.

    Stops on the same error-bound rule as the graph fixed-point iteration.
    """
    phi = np.zeros(mdp.n_states) if phi0 is None else np.array(phi0, dtype=float)
    phi[mdp.goal] = 0.0
    residual = prev = np.inf
    for it in range(1, params.max_iter + 1):
        new = _state_softmin(mdp, mdp.q_values(phi), params.theta)
        new[mdp.goal] = 0.0
        residual = float(np.max(np.abs(new - phi)))
        phi = new
        if converged_by_rate(residual, prev, phi, params.tol):
            break
        prev = residual
    else:
        raise MaxIterExceeded(params.max_iter, residual)
    return MdpPolicy(soft_policy(mdp, phi, params.theta), phi, it, residual, "soft", params.theta)


def greedy_policy(mdp: MdpSpec, values, tie_tol=TIE_TOL):
    """Deterministic argmin policy; ties go to the lowest action index."""
    Q = mdp.q_values(values)
    probs = np.zeros(mdp.n_actions)
    for k in range(mdp.n_states):
        idx = mdp.actions_of(k)
        if len(idx) == 0:
            continue
        q = Q[idx]
        best = q.min()
        first = int(np.flatnonzero(q <= best + tie_tol * max(1.0, abs(best)))[0])
        probs[idx[first]] = 1.0
    return probs


def standard_value_iteration(mdp: MdpSpec, tol=1e-10, max_iter=1_000_000) -> MdpPolicy:
    """Classic value iteration ``v_k = min_a (c_ka + sum_l p_al v_l)`` from ``v = 0``."""
    v = np.zeros(mdp.n_states)
    residual = np.inf
    t = mdp.table
    for it in range(1, max_iter + 1):
        Qt = np.where(t >= 0, mdp.per_state(mdp.q_values(v)), np.inf)
        new = np.where((t >= 0).any(axis=1), Qt.min(axis=1), 0.0)
        new[mdp.goal] = 0.0
        residual = float(np.max(np.abs(new - v)))
        v = new
        if residual < tol:
            break
    else:
        raise MaxIterExceeded(max_iter, residual)
    return MdpPolicy(greedy_policy(mdp, v), v, it, residual, "standard", float("inf"))


def state_chain(mdp: MdpSpec, probs):
    """State-to-state transition matrix and per-state expected immediate cost."""
    nS = mdp.n_states
    P = np.zeros((nS, nS))
    np.add.at(P, mdp.action_state, probs[:, None] * mdp.env)
    r = np.bincount(mdp.action_state, weights=probs * mdp.action_cost, minlength=nS)
    P[mdp.goal] = 0.0
    r[mdp.goal] = 0.0
    return P, r


def expected_first_passage_cost(mdp: MdpSpec, probs):
    """Solve ``v = r + P v`` on non-goal states, ``v_goal = 0``."""
    P, r = state_chain(mdp, probs)
    keep = np.arange(mdp.n_states) != mdp.goal
    A = np.eye(keep.sum()) - P[np.ix_(keep, keep)]
    try:
        x = np.linalg.solve(A, r[keep])
    except np.linalg.LinAlgError as exc:
        raise NotAbsorbing("goal unreachable under the policy's support") from exc
    if not np.all(np.isfinite(x)) or np.linalg.cond(A) > 1e14:
        raise NotAbsorbing("goal unreachable under the policy's support")
    v = np.zeros(mdp.n_states)
    v[keep] = x
    return v


def state_visits(mdp: MdpSpec, probs, start=None):
    """Expected number of visits to each state when starting from ``start``."""
    start = mdp.start if start is None else start
    P, _ = state_chain(mdp, probs)
    e = np.zeros(mdp.n_states)
    e[start] = 1.0
    n = np.linalg.solve((np.eye(mdp.n_states) - P).T, e)
    return np.maximum(n, 0.0)


def state_entropies(mdp: MdpSpec, probs):
    """Shannon entropy of the action distribution in each state (0 at the goal)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(probs > 0, -probs * np.log(np.where(probs > 0, probs, 1.0)), 0.0)
    return np.bincount(mdp.action_state, weights=t, minlength=mdp.n_states)


def policy_entropy(mdp: MdpSpec, probs, start=None):
    """Visit-weighted sum of state entropies (path entropy restricted to state nodes)."""
    return float(np.dot(state_visits(mdp, probs, start), state_entropies(mdp, probs)))


def greedy_path(mdp: MdpSpec, probs, start=None, max_len=None):
    """Follow the most probable action and its most likely outcome from ``start``."""
    k = mdp.start if start is None else start
    path = [k]
    max_len = max_len or 4 * mdp.n_states
    while k != mdp.goal and len(path) <= max_len:
        idx = mdp.actions_of(k)
        a = idx[int(np.argmax(probs[idx]))]
        k = int(np.argmax(mdp.env[a]))
        path.append(k)
    return path


# ---------------------------------------------------------------------------
# JSON I/O


def parse_mdp(doc: dict) -> MdpSpec:
    """Parse the MDP JSON document (1-based state ids)."""
    if not isinstance(doc, dict):
        raise GraphParseError("top level must be an object")
    for key in ("n_states", "goal", "states"):
        if key not in doc:
            raise GraphParseError(f"missing field '{key}'", key)
    nS, goal = doc["n_states"], doc["goal"]
    if not isinstance(nS, int) or nS < 1:
        raise GraphParseError("must be a positive integer", "n_states")
    if not isinstance(goal, int) or not 1 <= goal <= nS:
        raise GraphParseError(f"must be in 1..{nS}", "goal")
    start = doc.get("start", 1)
    actions = {}
    for si, st in enumerate(doc["states"]):
        ctx = f"states[{si}]"
        k = st.get("id")
        if not isinstance(k, int) or not 1 <= k <= nS:
            raise GraphParseError(f"'id' must be in 1..{nS}", ctx)
        if k - 1 in actions:
            raise GraphParseError(f"state {k} listed twice", ctx)
        acts = []
        for ai, a in enumerate(st.get("actions", [])):
            actx = f"{ctx}.actions[{ai}]"
            if "next_cost" in a:
                raise GraphParseError(
                    "action-to-state costs ('next_cost') are not supported; "
                    "fold them into the action cost", actx)
            if "cost" not in a or "next" not in a:
                raise GraphParseError("actions need 'cost' and 'next'", actx)
            c = a["cost"]
            if isinstance(c, bool) or not isinstance(c, (int, float)) or not math.isfinite(c):
                raise GraphParseError("'cost' must be a finite number", actx)
            nxt = {}
            for l, p in a["next"].items():
                try:
                    li = int(l)
                except ValueError:
                    raise GraphParseError(f"bad state key {l!r}", actx) from None
                if not 1 <= li <= nS:
                    raise GraphParseError(f"state {li} out of range", actx)
                nxt[li - 1] = float(p)
            entry = (a.get("id", ai), float(c), nxt)
            if "prior" in a:
                entry = entry + (float(a["prior"]),)
            acts.append(entry)
        if acts:
            actions[k - 1] = acts
    try:
        return MdpSpec.from_actions(nS, goal - 1, actions, start=start - 1)
    except ValueError as exc:
        raise GraphParseError(str(exc)) from exc


def load_mdp(src) -> MdpSpec:
    return parse_mdp(_read_json(src))


def mdp_to_dict(mdp: MdpSpec) -> dict:
    states = []
    for k in range(mdp.n_states):
        idx = mdp.actions_of(k)
        if len(idx) == 0:
            continue
        states.append({"id": k + 1, "actions": [
            {"id": mdp.action_names[a], "cost": float(mdp.action_cost[a]),
             "prior": float(mdp.prior[a]),
             "next": {str(l + 1): float(mdp.env[a, l]) for l in np.flatnonzero(mdp.env[a])}}
            for a in idx]})
    return {"n_states": mdp.n_states, "goal": mdp.goal + 1, "start": mdp.start + 1,
            "states": states}


def dump_mdp(mdp: MdpSpec, indent=1) -> str:
    return json.dumps(mdp_to_dict(mdp), indent=indent)
