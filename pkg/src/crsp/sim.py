"""Monte-Carlo evaluation of MDP policies, theta sweeps and the maze problem."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .engine import RspParams
from .mdp import (
    MdpSpec,
    expected_first_passage_cost,
    policy_entropy,
    soft_value_iteration,
)

log = logging.getLogger(__name__)

BLOCK = 1 << 14
SWEEP_COLUMNS = ("theta", "analytic_cost", "sim_mean", "sim_stderr", "entropy", "iterations")


@dataclass(frozen=True)
class SimConfig:
    runs: int = 1_000_000
    seed: int = 0
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.runs < 1 or self.max_steps < 1:
            raise ValueError("runs and max_steps must be >= 1")


@dataclass
class SimResult:
    mean: float
    stderr: float
    costs: np.ndarray
    truncated: int = 0

    @property
    def runs(self) -> int:
        return len(self.costs)

    def histogram(self, bins=50):
        return np.histogram(self.costs, bins=bins)


@dataclass
class SweepRecord:
    theta: float
    analytic_cost: float
    sim_mean: float
    sim_stderr: float
    entropy: float
    iterations: int
    truncated: int = 0
    error: str = ""


# ---------------------------------------------------------------------------
# maze

# cell label -> (column, row); north is +row
MAZE_CELLS = {
    1: (1, 0), 2: (2, 0), 3: (3, 0), 4: (4, 0),
    5: (1, 1), 6: (3, 1), 7: (4, 1),
    8: (1, 2), 9: (2, 2), 10: (3, 2), 11: (4, 2),
}
MAZE_DOORS = [(1, 2), (1, 5), (2, 3), (3, 4), (3, 6), (4, 7), (5, 8), (6, 7), (6, 10),
              (7, 11), (8, 9), (9, 10), (10, 11)]
MAZE_ACTIONS = ("N", "E", "S", "W")
_DIRS = {"N": (0, 1), "E": (1, 0), "S": (0, -1), "W": (-1, 0)}
# intended direction -> [(actual direction, probability)]
_OUTCOMES = {"N": [("N", 0.8), ("E", 0.1), ("W", 0.1)],
             "E": [("E", 1.0)], "S": [("S", 1.0)], "W": [("W", 1.0)]}


def _maze_move(cell, d):
    x, y = MAZE_CELLS[cell]
    dx, dy = _DIRS[d]
    for other, pos in MAZE_CELLS.items():
        if pos == (x + dx, y + dy):
            if (cell, other) in MAZE_DOORS or (other, cell) in MAZE_DOORS:
                return other
            break
    return cell


def build_maze(step_cost=1.0, penalty=100.0, penalty_cell=7) -> MdpSpec:
    """The 11-square maze: start 1, goal 11, slippery north moves, costly square 7.

    Each move costs ``step_cost``; landing on ``penalty_cell`` (including staying
    there after bumping into a wall) adds ``penalty``. Action costs are the
    expected step cost; the exact outcome costs are kept for simulation.
    """
    nS = len(MAZE_CELLS)
    actions = {}
    outcome = []
    for cell in range(1, nS):
        acts = []
        for name in MAZE_ACTIONS:
            row = np.zeros(nS)
            for d, p in _OUTCOMES[name]:
                row[_maze_move(cell, d) - 1] += p
            oc = np.full(nS, step_cost)
            oc[penalty_cell - 1] += penalty
            acts.append((name, float(row @ oc), row))
            outcome.append(oc)
        actions[cell - 1] = acts
    return MdpSpec.from_actions(nS, nS - 1, actions, start=0, outcome_cost=np.array(outcome))


# ---------------------------------------------------------------------------
# simulation


def _cumulative(p, valid):
    c = np.where(valid, np.cumsum(np.where(valid, p, 0.0), axis=1), 2.0)
    last = valid.sum(axis=1) - 1
    rows = np.arange(len(c))
    total = c[rows, np.maximum(last, 0)]
    c = np.where(valid, c / np.where(total > 0, total, 1.0)[:, None], 2.0)
    c[rows[last >= 0], last[last >= 0]] = 1.0
    return c


def _simulate_block(mdp, cum_pol, cum_env, step_cost, m, rng, max_steps):
    t = mdp.table
    state = np.full(m, mdp.start)
    cost = np.zeros(m)
    alive = np.arange(m) if mdp.start != mdp.goal else np.arange(0)
    steps = 0
    while alive.size and steps < max_steps:
        s = state[alive]
        u = rng.random(alive.size)
        slot = (cum_pol[s] <= u[:, None]).sum(axis=1)
        a = t[s, slot]
        u = rng.random(alive.size)
        nxt = (cum_env[a] <= u[:, None]).sum(axis=1)
        cost[alive] += step_cost[a, nxt]
        state[alive] = nxt
        alive = alive[nxt != mdp.goal]
        steps += 1
    return cost, alive.size


def simulate_policy(mdp: MdpSpec, probs, cfg: SimConfig) -> SimResult:
    """Run ``cfg.runs`` episodes from ``mdp.start`` until the goal or ``max_steps``.

    Runs are processed in fixed blocks of ``BLOCK``; block ``b`` draws from its
    own stream spawned from ``cfg.seed``, so results do not depend on block
    execution order. Outcome-dependent costs are used when the MDP has them.
    """
    probs = np.asarray(probs, dtype=float)
    valid = mdp.table >= 0
    cum_pol = _cumulative(mdp.per_state(probs), valid)
    cum_env = _cumulative(mdp.env, np.ones_like(mdp.env, dtype=bool))
    if mdp.outcome_cost is not None:
        step_cost = np.asarray(mdp.outcome_cost)
    else:
        step_cost = np.repeat(mdp.action_cost[:, None], mdp.n_states, axis=1)
    seeds = np.random.SeedSequence(cfg.seed)
    n_blocks = -(-cfg.runs // BLOCK)
    costs = np.empty(cfg.runs)
    truncated = 0
    for b, child in enumerate(seeds.spawn(n_blocks)):
        lo, hi = b * BLOCK, min(cfg.runs, (b + 1) * BLOCK)
        rng = np.random.Generator(np.random.Philox(child))
        c, tr = _simulate_block(mdp, cum_pol, cum_env, step_cost, hi - lo, rng, cfg.max_steps)
        costs[lo:hi] = c
        truncated += tr
    if truncated:
        log.warning("%d runs truncated at max_steps=%d", truncated, cfg.max_steps)
    mean = float(np.sum(costs) / cfg.runs)
    stderr = float(np.std(costs, ddof=1) / np.sqrt(cfg.runs)) if cfg.runs > 1 else 0.0
    return SimResult(mean, stderr, costs, truncated)


# ---------------------------------------------------------------------------
# sweeps and reports


def default_grid(lo=1e-3, hi=1e2, points=41):
    return np.logspace(np.log10(lo), np.log10(hi), points)


def parse_grid(text: str):
    """``"lo:hi:points"`` -> log-spaced grid."""
    lo, hi, pts = text.split(":")
    return default_grid(float(lo), float(hi), int(pts))


def sweep_point(mdp: MdpSpec, theta, cfg: SimConfig, tol=1e-10, max_iter=1_000_000):
    """Solve, evaluate analytically and simulate the soft-VI policy at one theta."""
    try:
        pol = soft_value_iteration(mdp, RspParams(theta, tol=tol, max_iter=max_iter))
        analytic = float(expected_first_passage_cost(mdp, pol.probs)[mdp.start])
        res = simulate_policy(mdp, pol.probs, cfg)
        return SweepRecord(float(theta), analytic, res.mean, res.stderr,
                           policy_entropy(mdp, pol.probs), pol.iterations, res.truncated)
    except Exception as exc:  # recorded per point; the sweep carries on
        log.error("theta=%g failed: %s", theta, exc)
        nan = float("nan")
        return SweepRecord(float(theta), nan, nan, nan, nan, 0, 0, f"{type(exc).__name__}: {exc}")


def theta_sweep(mdp: MdpSpec, thetas=None, cfg: SimConfig | None = None, workers=1, **solve_kw):
    """One :class:`SweepRecord` per theta, sorted by theta.

    Every point uses the same seed (common random numbers), which keeps the
    Monte-Carlo noise correlated across neighbouring thetas.
    """
    thetas = sorted(float(t) for t in (default_grid() if thetas is None else thetas))
    cfg = cfg or SimConfig()
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            futs = [ex.submit(sweep_point, mdp, t, cfg, **solve_kw) for t in thetas]
            return [f.result() for f in futs]
    return [sweep_point(mdp, t, cfg, **solve_kw) for t in thetas]


def write_sweep_csv(records, fp=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in records:
        d = asdict(r)
        w.writerow([format(d[c], ".17g") if isinstance(d[c], float) else d[c]
                    for c in SWEEP_COLUMNS])
    text = buf.getvalue()
    if fp is not None:
        fp.write(text)
    return text


def policy_report(mdp: MdpSpec, probs, fmt="text", digits=3) -> str:
    """Per-state action probabilities; the most probable action is flagged with ``*``.

    Columns follow the action names of the first state with actions (the
    maze uses N, E, S, W everywhere).
    """
    names = []
    for k in range(mdp.n_states):
        for a in mdp.actions_of(k):
            if mdp.action_names[a] not in names:
                names.append(mdp.action_names[a])
    rows = []
    for k in range(mdp.n_states):
        idx = mdp.actions_of(k)
        if len(idx) == 0:
            continue
        best = idx[int(np.argmax(probs[idx]))]
        cells = {mdp.action_names[a]: (float(probs[a]), a == best) for a in idx}
        rows.append((k + 1, cells))
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", *names, "best"])
        for k, cells in rows:
            best = next(n for n, (_, b) in cells.items() if b)
            w.writerow([k, *[format(cells[n][0], ".17g") if n in cells else "" for n in names],
                        best])
        return buf.getvalue()
    width = digits + 4
    lines = ["state " + " ".join(f"{n:>{width}}" for n in names)]
    for k, cells in rows:
        parts = []
        for n in names:
            if n not in cells:
                parts.append(" " * (width + 1))
                continue
            p, b = cells[n]
            parts.append(f"{p:{width}.{digits}f}" + ("*" if b else " "))
        lines.append(f"{k:>5} " + "".join(parts))
    return "\n".join(lines) + "\n"
