"""Constrained randomized shortest paths, soft value iteration and maze simulation."""

from .dual import AugmentedCosts, DualTrace, solve_constrained_dual
from .engine import RspParams, RspSolution, soft_bellman_ford, softmin, solve_rsp
from .errors import (
    DanglingNode,
    DuplicateEdge,
    GraphParseError,
    MaxIterExceeded,
    NotAbsorbing,
    RspError,
    UnderflowAtTheta,
    ValidationError,
    ZeroGamma,
)
from .fixedpoint import jacobian_spectral_check, solve_constrained_fixedpoint
from .graph import (
    ConstraintSpec,
    Graph,
    ReferenceChain,
    build_reference_chain,
    dump_graph,
    load_graph,
    validate,
)
from .mdp import (
    MdpPolicy,
    MdpSpec,
    expected_first_passage_cost,
    load_mdp,
    soft_value_iteration,
    standard_value_iteration,
    to_bipartite,
)
from .sim import SimConfig, SimResult, SweepRecord, build_maze, policy_report, simulate_policy, theta_sweep

__all__ = [
    "AugmentedCosts", "ConstraintSpec", "DanglingNode", "DualTrace", "DuplicateEdge", "Graph",
    "GraphParseError", "MaxIterExceeded", "MdpPolicy", "MdpSpec", "NotAbsorbing",
    "ReferenceChain", "RspError", "RspParams", "RspSolution", "SimConfig", "SimResult",
    "SweepRecord", "UnderflowAtTheta", "ValidationError", "ZeroGamma", "build_maze",
    "build_reference_chain", "dump_graph", "expected_first_passage_cost",
    "jacobian_spectral_check", "load_graph", "load_mdp", "policy_report", "simulate_policy",
    "soft_bellman_ford", "soft_value_iteration", "softmin", "solve_constrained_dual",
    "solve_constrained_fixedpoint", "solve_rsp", "standard_value_iteration", "theta_sweep",
    "to_bipartite", "validate",
]
