"""Per-state soft policies on the maze at low, middle and high theta."""

import argparse

from crsp.engine import RspParams
from crsp.mdp import expected_first_passage_cost, greedy_path, soft_value_iteration
from crsp.sim import build_maze, policy_report

THETAS = (10**-2.5, 10**-1, 10**0.5)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--format", choices=("text", "csv"), default="text")
    args = ap.parse_args()

    mdp = build_maze()
    for theta in THETAS:
        pol = soft_value_iteration(mdp, RspParams(theta))
        cost = expected_first_passage_cost(mdp, pol.probs)[mdp.start]
        path = [k + 1 for k in greedy_path(mdp, pol.probs)]
        print(f"theta = {theta:.4g}  expected cost {cost:.3f}  most likely path {path}")
        print(policy_report(mdp, pol.probs, fmt=args.format))


if __name__ == "__main__":
    main()
