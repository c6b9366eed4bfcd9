"""Random fixture generators and brute-force oracles shared by the test suite."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import logsumexp

from crsp.graph import ConstraintSpec, Graph, build_reference_chain
from crsp.mdp import MdpSpec


def line_graph():
    """1->2 (1), 2->3 (1), 1->3 (3); goal 3."""
    return Graph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)])


def random_graph(rng, n, extra=None, acyclic=False, cost_range=(0.1, 5.0)):
    """Chain 0->1->...->n-1 plus random extra edges; goal n-1, source 0.

    With ``acyclic`` only forward edges are added, so node order is topological.
    """
    edges = {(i, i + 1) for i in range(n - 1)}
    extra = rng.integers(n, 3 * n) if extra is None else extra
    for _ in range(extra):
        i, j = rng.integers(0, n - 1), rng.integers(0, n)
        if i == j or (acyclic and j < i):
            continue
        edges.add((int(i), int(j)))
    lo, hi = cost_range
    rows = [(i, j, float(rng.uniform(lo, hi)), float(rng.uniform(0.5, 2.0)))
            for i, j in sorted(edges)]
    return Graph.from_edges(n, rows)


def random_constrained(rng, n_max=15, frac=0.4, acyclic=False):
    """Random ``(g, rc, cs)``; constrained nodes are drawn among non-goal nodes."""
    n = int(rng.integers(4, n_max + 1))
    g = random_graph(rng, n, acyclic=acyclic)
    rc = build_reference_chain(g)
    nodes = [i for i in range(n - 1) if rng.random() < frac]
    if not nodes:
        nodes = [int(rng.integers(0, n - 1))]
    return g, rc, ConstraintSpec.from_reference(rc, nodes)


def enumerate_paths(g: Graph, start=None):
    """All source->goal paths of an acyclic graph, as node lists."""
    start = g.source if start is None else start
    out = []

    def walk(path):
        i = path[-1]
        if i == g.goal:
            out.append(list(path))
            return
        for j in g.successors(i):
            walk(path + [int(j)])

    walk([start])
    return out


def path_oracle(g: Graph, p_ref, theta):
    """Brute-force Z, path probabilities, edge flows, expected cost and entropies."""
    paths = enumerate_paths(g)
    logw = []
    for p in paths:
        lw = 0.0
        for i, j in zip(p, p[1:]):
            lw += np.log(p_ref[i, j]) - theta * g.costs[i, j]
        logw.append(lw)
    logw = np.array(logw)
    log_z = logsumexp(logw)
    Z = float(np.exp(log_z))
    prob = np.exp(logw - log_z)
    n = g.n
    edge = np.zeros((n, n))
    node = np.zeros(n)
    cost = 0.0
    for p, pr in zip(paths, prob):
        for i, j in zip(p, p[1:]):
            edge[i, j] += pr
            cost += pr * g.costs[i, j]
        for i in p:
            node[i] += pr
    ref = np.array([np.exp(sum(np.log(p_ref[i, j]) for i, j in zip(p, p[1:]))) for p in paths])
    m = prob > 0
    rel = float(np.sum(prob[m] * np.log(prob[m] / ref[m])))
    total = float(-np.sum(prob[m] * np.log(prob[m])))
    return dict(Z=Z, edge=edge, node=node, cost=cost, rel=rel, total=total, paths=paths, prob=prob)


def bellman_ford(g: Graph):
    """Classic shortest distances to the goal."""
    d = np.full(g.n, np.inf)
    d[g.goal] = 0.0
    for _ in range(g.n):
        for i, j in zip(*np.nonzero(g.edges)):
            d[i] = min(d[i], g.costs[i, j] + d[j])
    return d


def random_walk_cost(g: Graph, p_ref):
    """Expected cost to the goal under the reference walk (absorbing chain)."""
    n = g.n
    keep = [i for i in range(n) if i != g.goal]
    Q = p_ref[np.ix_(keep, keep)]
    r = np.array([np.sum(p_ref[i, g.adjacency[i] > 0] * g.costs[i, g.adjacency[i] > 0])
                  for i in keep])
    x = np.zeros(n)
    x[keep] = np.linalg.solve(np.eye(len(keep)) - Q, r)
    return x


def random_mdp(rng, n_states=None, max_actions=4, cost_range=(0.1, 5.0), prior="random"):
    """Random SSP-MDP; every action moves to a higher state with positive probability."""
    nS = int(rng.integers(3, 9)) if n_states is None else n_states
    goal = nS - 1
    actions = {}
    for k in range(nS - 1):
        acts = []
        for a in range(int(rng.integers(1, max_actions + 1))):
            nxt = np.zeros(nS)
            targets = rng.choice(nS, size=int(rng.integers(1, 4)), replace=False)
            nxt[targets] = rng.uniform(0.1, 1.0, size=len(targets))
            nxt[int(rng.integers(k + 1, nS))] += 0.5
            nxt /= nxt.sum()
            cost = float(rng.uniform(*cost_range))
            acts.append((f"a{a}", cost, nxt, float(rng.uniform(0.2, 1.0)) if prior == "random" else None))
        if prior == "random":
            tot = sum(x[3] for x in acts)
            acts = [(nm, c, nx, p / tot) for nm, c, nx, p in acts]
        else:
            acts = [x[:3] for x in acts]
        actions[k] = acts
    return MdpSpec.from_actions(nS, goal, actions)


def chain_mdp():
    """0 -> 1 -> goal 2, one deterministic action per state, unit costs."""
    return MdpSpec.from_actions(3, 2, {0: [("go", 1.0, {1: 1.0})], 1: [("go", 1.0, {2: 1.0})]})


def all_subsets(items):
    for r in range(len(items) + 1):
        yield from itertools.combinations(items, r)


# one "PASS/FAIL criterion ..." line per acceptance criterion, printed at session end
ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
