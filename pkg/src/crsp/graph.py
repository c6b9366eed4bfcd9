"""Graph, reference random walk and constraint containers, plus JSON I/O.

Node indices are 0-based everywhere in the library. Files use 1-based
indices; conversion happens only in :func:`load_graph` / :func:`dump_graph`.
Absent edges carry ``inf`` in the cost matrix, but every computation masks
with the adjacency so the sentinel never enters arithmetic.
"""

from __future__ import annotations

import io
import json
import logging
import math
import os
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Iterable, Union

import numpy as np

from .errors import DanglingNode, DuplicateEdge, GraphParseError, ValidationError

log = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Directed weighted graph with a distinguished absorbing goal node."""

    adjacency: np.ndarray
    costs: np.ndarray
    goal: int
    source: int = 0

    def __post_init__(self):
        adj = _frozen(self.adjacency)
        costs = _frozen(self.costs)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adj.shape}")
        if costs.shape != adj.shape:
            raise ValueError("costs and adjacency shapes differ")
        n = adj.shape[0]
        if not (0 <= self.goal < n and 0 <= self.source < n):
            raise ValueError("goal/source index out of range")
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "costs", costs)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edges(self) -> np.ndarray:
        """Boolean edge mask ``a_ij > 0``."""
        return self.adjacency > 0

    def successors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i] > 0)

    @classmethod
    def from_edges(cls, n, edges, goal=None, source=0):
        """Build from ``(i, j, cost)`` or ``(i, j, cost, affinity)`` tuples (0-based)."""
        adj = np.zeros((n, n))
        costs = np.full((n, n), np.inf)
        for e in edges:
            i, j, c = int(e[0]), int(e[1]), float(e[2])
            a = float(e[3]) if len(e) > 3 else 1.0
            if adj[i, j] > 0:
                raise DuplicateEdge(f"duplicate edge ({i}, {j})")
            adj[i, j] = a
            costs[i, j] = c
        return cls(adj, costs, goal=n - 1 if goal is None else goal, source=source)


@dataclass(frozen=True, eq=False)
class ReferenceChain:
    """Reference transition matrix; the goal row is zero (killing state)."""

    p_ref: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_ref", _frozen(self.p_ref))


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """Constrained nodes and their fixed outgoing distributions.

    ``q`` maps a node index to a full-length row (zeros off its successors).
    """

    constrained: tuple = ()
    q: dict = field(default_factory=dict)

    def __post_init__(self):
        nodes = tuple(sorted(int(i) for i in self.constrained))
        if set(nodes) != set(int(k) for k in self.q):
            raise ValueError("constrained nodes and q keys differ")
        object.__setattr__(self, "constrained", nodes)
        object.__setattr__(self, "q", {int(k): _frozen(v) for k, v in self.q.items()})

    @classmethod
    def from_reference(cls, rc: ReferenceChain, nodes: Iterable[int]):
        """Constrain ``nodes`` to their reference rows."""
        nodes = [int(i) for i in nodes]
        return cls(tuple(nodes), {i: rc.p_ref[i] for i in nodes})

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[list(self.constrained)] = True
        return m


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Issue:
    kind: str
    node: int = -1
    detail: str = ""

    def __str__(self):
        where = f"({self.node + 1})" if self.node >= 0 else ""
        return f"{self.kind}{where}" + (f": {self.detail}" if self.detail else "")


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def kinds(self) -> set:
        return {i.kind for i in self.issues}

    def __contains__(self, kind):
        return kind in self.kinds()

    def add(self, kind, node=-1, detail=""):
        self.issues.append(Issue(kind, node, detail))


def _reaches_goal(edges: np.ndarray, goal: int) -> np.ndarray:
    """Nodes from which ``goal`` is reachable (reverse BFS, goal out-edges ignored)."""
    n = edges.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[goal] = True
    queue = deque([goal])
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(edges[:, j]):
            if i != goal and not seen[i]:
                seen[i] = True
                queue.append(i)
    return seen


def _strongly_connected(edges: np.ndarray, goal: int, source: int) -> bool:
    """Strong connectivity with the goal's out-links replaced by a link to the source."""
    from scipy.sparse.csgraph import connected_components

    e = edges.astype(np.int8)
    e[goal] = 0
    e[goal, source] = 1
    k, _ = connected_components(e, directed=True, connection="strong")
    return k == 1


def validate(g: Graph, rc: ReferenceChain, cs: ConstraintSpec | None = None) -> ValidationReport:
    """Collect every violated invariant; an empty report means valid."""
    rep = ValidationReport()
    cs = cs or ConstraintSpec()
    n = g.n
    edges = g.edges
    adj, costs, p = g.adjacency, g.costs, rc.p_ref

    if np.any(adj < 0):
        rep.add("NegativeAffinity")
    for i in np.flatnonzero(np.diag(adj) > 0):
        rep.add("SelfLoop", int(i))
    finite = np.isfinite(costs)
    for i, j in zip(*np.nonzero(edges != finite)):
        rep.add("EdgeCostMismatch", int(i), f"edge to {j + 1}")
    if np.any(costs[edges & finite] < 0):
        for i, j in zip(*np.nonzero(edges & finite & (np.where(finite, costs, 0) < 0))):
            rep.add("NegativeCost", int(i), f"edge to {j + 1}")
    for i in range(n):
        if i != g.goal and not edges[i].any():
            rep.add("DanglingNode", i)
    reach = _reaches_goal(edges, g.goal)
    for i in np.flatnonzero(~reach):
        rep.add("Unreachable", int(i))

    if p.shape != (n, n):
        rep.add("ShapeMismatch", detail=f"p_ref has shape {p.shape}")
        return rep
    if np.any(p < 0):
        rep.add("NegativeProbability")
    if np.any(p[g.goal] != 0):
        rep.add("GoalRowNonZero", g.goal)
    for i in range(n):
        if i == g.goal:
            continue
        s = p[i].sum()
        if abs(s - 1.0) > STOCHASTIC_TOL:
            rep.add("NotStochastic", i, f"row sum {s!r}")
        if np.any((p[i] > 0) & ~edges[i]):
            rep.add("ProbabilityOffEdge", i)

    for i in cs.constrained:
        if not 0 <= i < n or i == g.goal:
            rep.add("BadConstrainedNode", i)
            continue
        q = cs.q[i]
        if q.shape != (n,):
            rep.add("ShapeMismatch", i, "q row")
            continue
        if abs(q.sum() - 1.0) > STOCHASTIC_TOL:
            rep.add("ConstraintNotStochastic", i, f"sum {q.sum()!r}")
        if np.any((q > 0) & ~edges[i]):
            rep.add("ConstraintOffEdge", i)
        if np.max(np.abs(q - p[i])) > STOCHASTIC_TOL:
            rep.add("ConstraintMismatch", i, "q differs from p_ref")

    if rep.ok and not _strongly_connected(edges, g.goal, g.source):
        log.warning("some nodes are not reachable from the source (goal reachability holds)")
    return rep


def build_reference_chain(g: Graph) -> ReferenceChain:
    """Row-normalize affinities; the goal row is zeroed."""
    adj = g.adjacency
    out = adj.sum(axis=1)
    for i in range(g.n):
        if i != g.goal and out[i] <= 0:
            raise DanglingNode(i + 1)
    p = np.zeros_like(adj)
    rows = np.arange(g.n) != g.goal
    p[rows] = adj[rows] / out[rows, None]
    return ReferenceChain(p)


# ---------------------------------------------------------------------------
# JSON I/O

Source = Union[str, os.PathLike, IO[str], dict]


def _read_json(src: Source) -> dict:
    if isinstance(src, dict):
        return src
    try:
        if hasattr(src, "read"):
            return json.load(src)
        with open(src) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise GraphParseError(exc.msg, context=f"line {exc.lineno} col {exc.colno}") from exc


def _int_field(obj, key, ctx):
    if key not in obj:
        raise GraphParseError(f"missing field '{key}'", ctx)
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise GraphParseError(f"'{key}' must be an integer", ctx)
    return v


def _num_field(obj, key, ctx):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise GraphParseError(f"'{key}' must be a number", ctx)
    return float(v)


def parse_graph(doc: dict, check: bool = True):
    """Parse an already-decoded graph document; see :func:`load_graph`."""
    if not isinstance(doc, dict):
        raise GraphParseError("top level must be an object")
    n = _int_field(doc, "n", "n")
    if n < 1:
        raise GraphParseError("must be >= 1", "n")
    goal = _int_field(doc, "goal", "goal")
    source = _int_field(doc, "source", "source") if "source" in doc else 1
    for name, v in (("goal", goal), ("source", source)):
        if not 1 <= v <= n:
            raise GraphParseError(f"out of range 1..{n}", name)

    adj = np.zeros((n, n))
    costs = np.full((n, n), np.inf)
    p_given = np.full((n, n), np.nan)
    edges = doc.get("edges", [])
    if not isinstance(edges, list):
        raise GraphParseError("must be a list", "edges")
    for k, e in enumerate(edges):
        ctx = f"edges[{k}]"
        if not isinstance(e, dict):
            raise GraphParseError("must be an object", ctx)
        i, j = _int_field(e, "from", ctx), _int_field(e, "to", ctx)
        if not (1 <= i <= n and 1 <= j <= n):
            raise GraphParseError(f"node index out of range 1..{n}", ctx)
        if "cost" not in e:
            raise GraphParseError("missing field 'cost'", ctx)
        c = _num_field(e, "cost", ctx)
        if not math.isfinite(c):
            raise GraphParseError("cost must be finite", ctx)
        i, j = i - 1, j - 1
        if adj[i, j] > 0:
            raise DuplicateEdge(f"duplicate edge {i + 1}->{j + 1}", ctx)
        if "p_ref" in e:
            p_given[i, j] = _num_field(e, "p_ref", ctx)
        if "affinity" in e:
            a = _num_field(e, "affinity", ctx)
        elif "p_ref" in e:
            a = p_given[i, j]
        else:
            a = 1.0
        if a <= 0:
            raise GraphParseError("affinity must be positive", ctx)
        adj[i, j] = a
        costs[i, j] = c

    g = Graph(adj, costs, goal=goal - 1, source=source - 1)
    p = build_reference_chain(g).p_ref.copy()
    for i in range(n):
        row = adj[i] > 0
        given = ~np.isnan(p_given[i]) & row
        if i == g.goal or not given.any():
            continue
        if not np.array_equal(given, row):
            raise GraphParseError("p_ref must be given on all or none of a node's edges",
                                  f"node {i + 1}")
        p[i] = np.where(row, p_given[i], 0.0)
    rc = ReferenceChain(p)

    nodes, q = [], {}
    for k, item in enumerate(doc.get("constrained", [])):
        ctx = f"constrained[{k}]"
        i = _int_field(item, "node", ctx)
        if not 1 <= i <= n:
            raise GraphParseError(f"node index out of range 1..{n}", ctx)
        if i - 1 in q:
            raise GraphParseError(f"node {i} constrained twice", ctx)
        qi = item.get("q")
        if not isinstance(qi, dict):
            raise GraphParseError("'q' must be an object", ctx)
        row = np.zeros(n)
        for key, val in qi.items():
            try:
                j = int(key)
            except ValueError:
                raise GraphParseError(f"bad successor key {key!r}", ctx) from None
            if not 1 <= j <= n:
                raise GraphParseError(f"successor {j} out of range", ctx)
            row[j - 1] = _num_field(qi, key, f"{ctx}.q")
        nodes.append(i - 1)
        q[i - 1] = row
    cs = ConstraintSpec(tuple(nodes), q)

    if check:
        rep = validate(g, rc, cs)
        if not rep.ok:
            raise ValidationError(rep)
    return g, rc, cs


def load_graph(src: Source, check: bool = True):
    """Load ``(Graph, ReferenceChain, ConstraintSpec)`` from a JSON file, stream or dict.

    Missing ``p_ref`` values default to normalized affinities; missing
    ``affinity`` defaults to the given ``p_ref`` or to 1.
    """
    return parse_graph(_read_json(src), check=check)


def graph_to_dict(g: Graph, rc: ReferenceChain, cs: ConstraintSpec | None = None) -> dict:
    cs = cs or ConstraintSpec()
    edges = []
    for i, j in zip(*np.nonzero(g.edges)):
        edges.append({
            "from": int(i) + 1,
            "to": int(j) + 1,
            "cost": float(g.costs[i, j]),
            "affinity": float(g.adjacency[i, j]),
            "p_ref": float(rc.p_ref[i, j]),
        })
    constrained = [
        {"node": i + 1,
         "q": {str(int(j) + 1): float(cs.q[i][j]) for j in np.flatnonzero(cs.q[i])}}
        for i in cs.constrained
    ]
    return {"n": g.n, "goal": g.goal + 1, "source": g.source + 1,
            "edges": edges, "constrained": constrained}


def dump_graph(g, rc, cs=None, fp: IO[str] | None = None, indent=1) -> str:
    text = json.dumps(graph_to_dict(g, rc, cs), indent=indent)
    if fp is not None:
        fp.write(text)
    return text


def loads_graph(text: str, check: bool = True):
    return load_graph(io.StringIO(text), check=check)
