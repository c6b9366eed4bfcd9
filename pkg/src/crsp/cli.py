"""``rsp`` command line: validate, solve, mdp, simulate, sweep, report.

Exit codes: 0 success, 1 invalid input, 2 solver did not converge, 3 I/O error.
JSON/CSV results go to stdout (or ``--out``); a short human summary goes to
stderr. ``RSP_LOG`` (error, info, debug) sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from .dual import DEFAULT_TOL as DUAL_TOL
from .dual import MAX_SWEEPS, solve_constrained_dual
from .engine import RspParams
from .errors import (
    GraphParseError,
    MaxIterExceeded,
    NotAbsorbing,
    RspError,
    UnderflowAtTheta,
    ValidationError,
)
from .fixedpoint import solve_constrained_fixedpoint
from .graph import _read_json, parse_graph, validate
from .mdp import (
    expected_first_passage_cost,
    greedy_path,
    parse_mdp,
    policy_entropy,
    soft_value_iteration,
    standard_value_iteration,
    validate_mdp,
)
from .sim import (
    SimConfig,
    build_maze,
    parse_grid,
    policy_report,
    simulate_policy,
    theta_sweep,
    write_sweep_csv,
)

log = logging.getLogger("crsp")

EXIT_OK, EXIT_INVALID, EXIT_NOCONV, EXIT_IO = 0, 1, 2, 3
FIXEDPOINT_MAX_ITER = 1_000_000


@dataclass
class CliConfig:
    command: str
    input: str | None = None
    theta: float | None = None
    grid: str | None = None
    tol: float | None = None
    max_iter: int | None = None
    solver: str = "dual"
    seed: int = 0
    runs: int = 100_000
    out: str | None = None
    fmt: str = "json"

    def __post_init__(self):
        if self.theta is not None and not self.theta > 0:
            raise ValueError("--theta must be > 0")
        if self.solver not in ("dual", "fixedpoint"):
            raise ValueError(f"unknown solver {self.solver!r}")

    @classmethod
    def from_args(cls, args):
        return cls(
            command=args.command,
            input=getattr(args, "input", None) or getattr(args, "mdp", None),
            theta=getattr(args, "theta", None),
            grid=getattr(args, "grid", None),
            tol=getattr(args, "tol", None),
            max_iter=getattr(args, "max_iter", None),
            solver=getattr(args, "solver", "dual"),
            seed=getattr(args, "seed", 0),
            runs=getattr(args, "runs", 100_000),
            out=getattr(args, "out", None),
            fmt=getattr(args, "format", "json"),
        )


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rsp", description="Constrained randomized shortest paths.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a graph or MDP file")
    v.add_argument("input")

    s = sub.add_parser("solve", help="solve a constrained RSP graph")
    s.add_argument("input")
    s.add_argument("--solver", choices=("dual", "fixedpoint"), default="dual")
    s.add_argument("--theta", type=_positive_float, required=True)
    s.add_argument("--tol", type=_positive_float)
    s.add_argument("--max-iter", type=_positive_int)
    s.add_argument("--out")

    m = sub.add_parser("mdp", help="soft or standard value iteration")
    _mdp_source(m)
    kind = m.add_mutually_exclusive_group(required=True)
    kind.add_argument("--theta", type=_positive_float)
    kind.add_argument("--standard", action="store_true")
    m.add_argument("--tol", type=_positive_float, default=1e-10)
    m.add_argument("--max-iter", type=_positive_int, default=FIXEDPOINT_MAX_ITER)
    m.add_argument("--out")

    r = sub.add_parser("report", help="per-state policy table")
    _mdp_source(r)
    kind = r.add_mutually_exclusive_group(required=True)
    kind.add_argument("--theta", type=_positive_float)
    kind.add_argument("--standard", action="store_true")
    r.add_argument("--format", choices=("text", "csv"), default="text")
    r.add_argument("--out")

    sm = sub.add_parser("simulate", help="Monte-Carlo evaluation of a policy")
    _mdp_source(sm)
    kind = sm.add_mutually_exclusive_group(required=True)
    kind.add_argument("--theta", type=_positive_float)
    kind.add_argument("--standard", action="store_true")
    sm.add_argument("--runs", type=_positive_int, default=100_000)
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--max-steps", type=_positive_int, default=1_000_000)
    sm.add_argument("--bins", type=_positive_int, default=0,
                    help="include a cost histogram with this many bins")
    sm.add_argument("--out")

    sw = sub.add_parser("sweep", help="theta sweep to CSV")
    _mdp_source(sw)
    sw.add_argument("--grid", default="1e-3:1e2:41", help="lo:hi:points, log-spaced")
    sw.add_argument("--runs", type=_positive_int, default=100_000)
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--max-steps", type=_positive_int, default=1_000_000)
    sw.add_argument("--workers", type=_positive_int, default=1)
    sw.add_argument("--out")
    return p


def _mdp_source(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("input", nargs="?", help="MDP JSON file")
    src.add_argument("--mdp", choices=("maze",), help="built-in problem")


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dumps(obj):
    return json.dumps(obj, indent=1, allow_nan=True) + "\n"


def _matrix(a):
    return [[float(x) for x in row] for row in np.asarray(a)]


def _vector(a):
    return [float(x) for x in np.asarray(a)]


def _load_mdp(args):
    if args.mdp == "maze":
        return build_maze()
    return parse_mdp(_read_json(args.input))


def _mdp_policy(args, mdp):
    if args.standard:
        return standard_value_iteration(mdp)
    tol = getattr(args, "tol", 1e-10)
    max_iter = getattr(args, "max_iter", FIXEDPOINT_MAX_ITER)
    return soft_value_iteration(mdp, RspParams(args.theta, tol=tol, max_iter=max_iter))


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args):
    doc = _read_json(args.input)
    kind = "mdp" if isinstance(doc, dict) and "n_states" in doc else "graph"
    try:
        if kind == "mdp":
            rep = validate_mdp(parse_mdp(doc))
        else:
            rep = validate(*parse_graph(doc, check=False))
    except ValidationError as exc:
        rep = exc.report
    issues = [{"kind": i.kind, "node": i.node + 1 if i.node >= 0 else None, "detail": i.detail}
              for i in rep.issues]
    _emit(_dumps({"kind": kind, "valid": rep.ok, "issues": issues}), None)
    print(f"{args.input}: {'valid' if rep.ok else f'{len(issues)} issue(s)'}", file=sys.stderr)
    for i in rep.issues:
        print(f"  {i}", file=sys.stderr)
    return EXIT_OK if rep.ok else EXIT_INVALID


def solution_dict(sol, trace=None, aug=None):
    """JSON-ready view of a solution; node ids are 1-based."""
    d = {
        "solver": sol.solver,
        "theta": sol.theta,
        "n": len(sol.phi),
        "source": sol.source + 1,
        "goal": sol.goal + 1,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "residual": sol.residual,
        "free_energy": _vector(sol.phi),
        "backward": _vector(sol.z_b),
        "policy": _matrix(sol.policy),
        "edge_flows": _matrix(sol.edge_flows),
        "node_flows": _vector(sol.node_flows),
        "expected_cost": sol.expected_cost,
        "rel_entropy": sol.rel_entropy,
        "total_entropy": sol.total_entropy,
        "constraint_residual": float(sol.extra.get("constraint_residual", 0.0)),
    }
    if trace is not None:
        d["trace"] = {
            "initial_dual": trace.initial_dual,
            "dual": list(trace.dual),
            "constraint_residual": list(trace.constraint_residual),
            "centering": list(trace.centering),
            "phi_change": list(trace.phi_change),
        }
    if aug is not None:
        d["augmented_costs"] = _matrix(np.where(np.isfinite(aug.c_prime), aug.c_prime, 0.0))
    return d


def cmd_solve(args):
    g, rc, cs = parse_graph(_read_json(args.input))
    if args.solver == "dual":
        params = RspParams(args.theta)
        tol = args.tol or DUAL_TOL
        sol, aug, trace = solve_constrained_dual(g, rc, cs, params, tol=tol,
                                                 max_sweeps=args.max_iter or MAX_SWEEPS)
        out = solution_dict(sol, trace, aug)
    else:
        params = RspParams(args.theta, tol=args.tol or 1e-10,
                           max_iter=args.max_iter or FIXEDPOINT_MAX_ITER)
        sol = solve_constrained_fixedpoint(g, rc, cs, params)
        out = solution_dict(sol)
    _emit(_dumps(out), args.out)
    print(f"{args.solver}: theta={args.theta:g} phi[source]={sol.phi[g.source]:.10g} "
          f"<c>={sol.expected_cost:.10g} iterations={sol.iterations}", file=sys.stderr)
    return EXIT_OK


def cmd_mdp(args):
    mdp = _load_mdp(args)
    pol = _mdp_policy(args, mdp)
    states = []
    for k in range(mdp.n_states):
        idx = mdp.actions_of(k)
        states.append({
            "id": k + 1,
            "value": float(pol.values[k]),
            "policy": {str(mdp.action_names[a]): float(pol.probs[a]) for a in idx},
        })
    path = [k + 1 for k in greedy_path(mdp, pol.probs)]
    out = {
        "method": pol.method,
        "theta": pol.theta,
        "iterations": pol.iterations,
        "residual": pol.residual,
        "expected_cost": float(expected_first_passage_cost(mdp, pol.probs)[mdp.start]),
        "entropy": policy_entropy(mdp, pol.probs),
        "greedy_path": path,
        "states": states,
    }
    _emit(_dumps(out), args.out)
    print(f"{pol.method}: value[start]={pol.values[mdp.start]:.10g} path={path}", file=sys.stderr)
    return EXIT_OK


def cmd_report(args):
    mdp = _load_mdp(args)
    pol = _mdp_policy(args, mdp)
    _emit(policy_report(mdp, pol.probs, fmt=args.format), args.out)
    return EXIT_OK


def cmd_simulate(args):
    mdp = _load_mdp(args)
    pol = _mdp_policy(args, mdp)
    cfg = SimConfig(runs=args.runs, seed=args.seed, max_steps=args.max_steps)
    res = simulate_policy(mdp, pol.probs, cfg)
    analytic = float(expected_first_passage_cost(mdp, pol.probs)[mdp.start])
    out = {
        "theta": pol.theta,
        "method": pol.method,
        "runs": res.runs,
        "seed": args.seed,
        "mean": res.mean,
        "stderr": res.stderr,
        "analytic_cost": analytic,
        "truncated": res.truncated,
    }
    if args.bins:
        counts, edges = res.histogram(args.bins)
        out["histogram"] = {"counts": [int(c) for c in counts], "edges": _vector(edges)}
    _emit(_dumps(out), args.out)
    print(f"mean={res.mean:.6g} +/- {res.stderr:.3g} (analytic {analytic:.6g}, "
          f"{res.truncated} truncated)", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args):
    mdp = _load_mdp(args)
    try:
        grid = parse_grid(args.grid)
    except ValueError as exc:
        raise GraphParseError(f"bad grid {args.grid!r}: {exc}", "--grid") from None
    if np.any(grid <= 0):
        raise GraphParseError("grid values must be > 0", "--grid")
    cfg = SimConfig(runs=args.runs, seed=args.seed, max_steps=args.max_steps)
    records = theta_sweep(mdp, grid, cfg, workers=args.workers)
    _emit(write_sweep_csv(records), args.out)
    failed = [r for r in records if r.error]
    print(f"{len(records)} points, {len(failed)} failed", file=sys.stderr)
    return EXIT_NOCONV if failed else EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "mdp": cmd_mdp,
    "report": cmd_report,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


def _setup_logging():
    level = os.environ.get("RSP_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def run(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    log.debug("%s", CliConfig.from_args(args))
    try:
        return COMMANDS[args.command](args)
    except (GraphParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (MaxIterExceeded, NotAbsorbing, UnderflowAtTheta) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RspError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
