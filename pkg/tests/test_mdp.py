import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crsp.dual import solve_constrained_dual
from crsp.engine import RspParams
from crsp.errors import GraphParseError, MaxIterExceeded, NotAbsorbing, ValidationError
from crsp.fixedpoint import solve_constrained_fixedpoint
from crsp.mdp import (
    MdpSpec,
    dump_mdp,
    expected_first_passage_cost,
    greedy_path,
    greedy_policy,
    load_mdp,
    mdp_to_dict,
    parse_mdp,
    policy_entropy,
    soft_policy,
    soft_value_iteration,
    standard_value_iteration,
    state_visits,
    to_bipartite,
    validate_mdp,
)
from crsp.sim import build_maze

from helpers import chain_mdp, random_mdp

THETAS = [0.1, 1.0, 10.0]


def random_mdps(seed=31, count=8, **kw):
    rng = np.random.default_rng(seed)
    return [random_mdp(rng, **kw) for _ in range(count)]


def soft(mdp, theta, tol=1e-12):
    return soft_value_iteration(mdp, RspParams(theta, tol=tol))


# ---------------------------------------------------------------------------
# reduction


def test_bipartite_shape_maze():
    mdp = build_maze()
    g, rc, cs = to_bipartite(mdp)
    assert mdp.n_states == 11 and mdp.n_actions == 40
    assert g.n == 51 and g.goal == 10 and g.source == 0
    assert cs.constrained == tuple(range(11, 51))
    # state -> action edges carry the prior, action -> state edges the environment
    np.testing.assert_allclose(rc.p_ref[0, 11:15], 0.25)
    np.testing.assert_array_equal(rc.p_ref[11:, :11], mdp.env)
    assert np.all(g.costs[11:, :11][mdp.env > 0] == 0.0)


def test_bipartite_trivial_chain():
    mdp = chain_mdp()
    g, rc, cs = to_bipartite(mdp)
    assert g.n == 5
    for theta in THETAS:
        sol, _, _ = solve_constrained_dual(g, rc, cs, RspParams(theta))
        assert sol.phi[0] == pytest.approx(2.0, abs=1e-12)
        assert soft(mdp, theta).values[0] == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("theta", THETAS)
def test_soft_vi_matches_both_graph_solvers(theta):
    for mdp in random_mdps() + [build_maze()]:
        pol = soft(mdp, theta)
        g, rc, cs = to_bipartite(mdp)
        nS = mdp.n_states
        acts = nS + np.arange(mdp.n_actions)
        d, _, _ = solve_constrained_dual(g, rc, cs, RspParams(theta), tol=1e-11)
        f = solve_constrained_fixedpoint(g, rc, cs, RspParams(theta, tol=1e-12))
        for sol in (d, f):
            np.testing.assert_allclose(sol.phi[:nS], pol.values, atol=1e-6)
            np.testing.assert_allclose(sol.policy[mdp.action_state, acts], pol.probs, atol=1e-6)
        # action-node free energy is the expected successor free energy
        np.testing.assert_allclose(f.phi[acts], mdp.env @ f.phi[:nS], atol=1e-9)


def test_round_trip_through_graph_is_tight():
    mdp = build_maze()
    g, rc, cs = to_bipartite(mdp)
    pol = soft(mdp, 1.0, tol=1e-13)
    f = solve_constrained_fixedpoint(g, rc, cs, RspParams(1.0, tol=1e-13))
    np.testing.assert_allclose(f.phi[:mdp.n_states], pol.values, atol=1e-8)


# ---------------------------------------------------------------------------
# value iteration


def test_standard_vi_maze():
    mdp = build_maze()
    pol = standard_value_iteration(mdp)
    assert [k + 1 for k in greedy_path(mdp, pol.probs)] == [1, 5, 8, 9, 10, 11]
    assert pol.values[0] == pytest.approx(5.625, abs=1e-9)
    assert set(np.unique(pol.probs)) <= {0.0, 1.0}


def test_soft_vi_maze_path():
    mdp = build_maze()
    pol = soft(mdp, 10**0.5)
    assert [k + 1 for k in greedy_path(mdp, pol.probs)] == [1, 5, 8, 9, 10, 11]


def test_softmin_bounds_and_monotonicity():
    for mdp in random_mdps(seed=32) + [build_maze()]:
        v = standard_value_iteration(mdp).values
        fp = expected_first_passage_cost(mdp, mdp.prior)
        prev = None
        for theta in (0.01, 0.1, 1.0, 10.0):
            phi = soft(mdp, theta).values
            assert np.all(v <= phi + 1e-9)
            assert np.all(phi <= fp + 1e-9)
            if prev is not None:
                assert np.all(phi <= prev + 1e-9)
            prev = phi


def test_single_action_is_first_passage():
    for mdp in random_mdps(seed=34, max_actions=1):
        fp = expected_first_passage_cost(mdp, np.ones(mdp.n_actions))
        for theta in (0.1, 5.0):
            np.testing.assert_allclose(soft(mdp, theta).values, fp, atol=1e-9)
        np.testing.assert_allclose(standard_value_iteration(mdp).values, fp, atol=1e-8)


def test_zero_costs_give_zero_values():
    mdp = random_mdps(seed=35, count=1, cost_range=(0.0, 0.0))[0]
    assert np.all(standard_value_iteration(mdp).values == 0.0)
    np.testing.assert_allclose(soft(mdp, 1.0).values, 0.0, atol=1e-12)


def test_greedy_first_passage_equals_value():
    for mdp in random_mdps(seed=36) + [build_maze()]:
        pol = standard_value_iteration(mdp, tol=1e-13)
        np.testing.assert_allclose(expected_first_passage_cost(mdp, pol.probs), pol.values,
                                   atol=1e-8)
    assert expected_first_passage_cost(chain_mdp(), np.ones(2))[0] == 2.0


def test_greedy_ties_go_to_lowest_index():
    mdp = MdpSpec.from_actions(2, 1, {0: [("a", 1.0, {1: 1.0}), ("b", 1.0, {1: 1.0})]})
    np.testing.assert_array_equal(greedy_policy(mdp, np.zeros(2)), [1.0, 0.0])


def test_soft_policy_is_local_softmin():
    mdp = build_maze()
    theta = 2.0
    pol = soft(mdp, theta)
    Q = mdp.q_values(pol.values)
    for k in range(mdp.n_states - 1):
        idx = mdp.actions_of(k)
        w = mdp.prior[idx] * np.exp(-theta * (Q[idx] - Q[idx].min()))
        np.testing.assert_allclose(pol.probs[idx], w / w.sum(), atol=1e-12)
        # self-consistency of the value
        s = -np.log(np.dot(mdp.prior[idx], np.exp(-theta * Q[idx]))) / theta
        assert pol.values[k] == pytest.approx(s, abs=1e-9)


def test_soft_policy_first_passage_tracks_value_at_high_theta():
    mdp = build_maze()
    v = standard_value_iteration(mdp).values
    pol = soft(mdp, 100.0)
    np.testing.assert_allclose(expected_first_passage_cost(mdp, pol.probs), v, atol=1e-8)


def test_high_theta_gap_shrinks_as_one_over_theta():
    # the softmin keeps an entropy term of size log(#near-ties)/theta
    mdp = build_maze()
    v = standard_value_iteration(mdp).values
    gaps = [np.max(np.abs(soft(mdp, t).values - v)) for t in (100.0, 1000.0, 10000.0)]
    assert gaps[0] / gaps[1] == pytest.approx(10.0, rel=0.05)
    assert gaps[1] / gaps[2] == pytest.approx(10.0, rel=0.05)
    assert gaps[2] < 2e-3


def test_low_theta_gap_is_first_order():
    mdp = build_maze()
    fp = expected_first_passage_cost(mdp, mdp.prior)
    gaps = [np.max(np.abs(soft(mdp, t, tol=1e-10).values - fp)) for t in (1e-6, 1e-7)]
    assert gaps[1] < gaps[0]
    assert gaps[0] / gaps[1] == pytest.approx(10.0, rel=0.05)
    for mdp in random_mdps(seed=37, cost_range=(0.1, 2.0)):
        fp = expected_first_passage_cost(mdp, mdp.prior)
        np.testing.assert_allclose(soft(mdp, 1e-6, tol=1e-10).values, fp, atol=1e-3)


def test_entropy_limits():
    mdp = build_maze()
    det = standard_value_iteration(mdp).probs
    assert policy_entropy(mdp, det) == 0.0
    uni = policy_entropy(mdp, mdp.prior)
    assert uni == pytest.approx(state_visits(mdp, mdp.prior)[:-1].sum() * np.log(4), rel=1e-12)
    assert policy_entropy(mdp, soft(mdp, 1.0).probs) < uni


def test_soft_policy_at_uniform_values_is_prior():
    mdp = random_mdps(seed=38, count=1)[0]
    np.testing.assert_allclose(soft_policy(mdp, np.zeros(mdp.n_states), 1e-12), mdp.prior,
                               atol=1e-9)


def test_max_iter_and_not_absorbing():
    with pytest.raises(MaxIterExceeded):
        soft_value_iteration(build_maze(), RspParams(1.0, tol=1e-300, max_iter=5))
    # a policy that only bumps into the wall never reaches the goal
    mdp = build_maze()
    probs = np.zeros(mdp.n_actions)
    for k in range(mdp.n_states - 1):
        probs[mdp.actions_of(k)[2]] = 1.0  # always south
    with pytest.raises(NotAbsorbing):
        expected_first_passage_cost(mdp, probs)


# ---------------------------------------------------------------------------
# validation and JSON


def test_validation_rejects_bad_models():
    with pytest.raises(ValidationError):
        MdpSpec.from_actions(2, 1, {0: [("a", 1.0, {0: 1.0})]})
    with pytest.raises(ValidationError):
        MdpSpec.from_actions(2, 1, {0: [("a", -1.0, {1: 1.0})]})
    with pytest.raises(ValidationError):
        MdpSpec.from_actions(2, 1, {0: [("a", 1.0, {1: 0.5})]})
    with pytest.raises(ValidationError):
        MdpSpec.from_actions(3, 2, {0: [("a", 1.0, {2: 1.0})]})
    assert validate_mdp(build_maze()).ok


def test_parse_and_round_trip():
    mdp = build_maze()
    back = load_mdp(json.loads(dump_mdp(mdp)))
    np.testing.assert_array_equal(back.env, mdp.env)
    np.testing.assert_array_equal(back.action_cost, mdp.action_cost)
    np.testing.assert_array_equal(back.prior, mdp.prior)
    assert back.action_names == mdp.action_names
    assert mdp_to_dict(back) == mdp_to_dict(mdp)


def test_parse_errors():
    base = {"n_states": 2, "goal": 2, "states": [
        {"id": 1, "actions": [{"cost": 1, "next": {"2": 1.0}, "next_cost": {"2": 0.0}}]}]}
    with pytest.raises(GraphParseError, match="next_cost"):
        parse_mdp(base)
    with pytest.raises(GraphParseError, match="goal"):
        parse_mdp({"n_states": 2, "goal": 3, "states": []})
    with pytest.raises(GraphParseError, match="out of range"):
        parse_mdp({"n_states": 2, "goal": 2, "states": [
            {"id": 1, "actions": [{"cost": 1, "next": {"4": 1.0}}]}]})
    with pytest.raises(GraphParseError, match="missing"):
        parse_mdp({"goal": 2, "states": []})


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 20.0))
def test_soft_vi_sandwich_random(seed, theta):
    mdp = random_mdp(np.random.default_rng(seed))
    phi = soft(mdp, theta, tol=1e-11).values
    v = standard_value_iteration(mdp).values
    fp = expected_first_passage_cost(mdp, mdp.prior)
    assert np.all(v <= phi + 1e-8) and np.all(phi <= fp + 1e-8)
    assert phi[mdp.goal] == 0.0
