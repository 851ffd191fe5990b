import math

import numpy as np
import pytest

from certipomdp.bounds import (
    BoundConfig, BoundInterval, PrefixViolation, all_obs, closed_form_width, epsilon_obs, epsilon_obs_action,
    no_obs, obs_subsets, optimal_action_bounds, optimal_root_bounds, prune_decision, root_bounds_closed,
    root_bounds_recursive, simplified_value, udb,
)
from certipomdp.core import Belief, History, belief_reward
from certipomdp.environments import LISTEN, OPEN_LEFT, make_env
from certipomdp.oracle import (
    PolicyTree, constant_policy, enumerate_trajectories, exact_optimal_value, exact_policy_q, exact_policy_value,
    exact_q_values,
)
from certipomdp.tree import BeliefTree

from gen import random_model, random_policy, random_tree, random_zbar, retained_subset, tree_from


def brute_epsilon(model, policy, zbar):
    """R_max times the discounted lost mass per later step, from trajectory enumeration."""
    kept_mass = [0.0] * (model.last_step + 1)
    for tau, w in enumerate_trajectories(model, policy):
        h = tau.history
        ok = all(
            h.observations[j] in zbar(History(h.actions[: j + 1], h.observations[:j]))
            for j in range(tau.t)
        )
        if ok:
            kept_mass[tau.t] += w
    return model.r_max * sum(
        model.discount ** k * (1.0 - kept_mass[k]) for k in range(1, model.last_step + 1)
    )


def slice_masses(taus, depth):
    masses = [0.0] * (depth + 1)
    for tau in taus:
        masses[tau.t] += tau.weight
    return masses


# -- observation simplification ------------------------------------------------


def test_epsilon_full_and_empty():
    m = make_env("tiger", 4)
    b = Belief.prior(m)
    pol = constant_policy(m, LISTEN, 4)
    assert epsilon_obs(m, b, pol, all_obs(m)) == pytest.approx(0.0, abs=1e-9)
    assert epsilon_obs(m, b, pol, no_obs) == pytest.approx(m.r_max * 3)


def test_epsilon_tiger_hear_left_only():
    m = make_env("tiger", 2)
    pol = constant_policy(m, LISTEN, 2)
    zbar = obs_subsets({History((LISTEN,), ()): {0}})
    eps = epsilon_obs(m, Belief.prior(m), pol, zbar)
    assert eps == pytest.approx(brute_epsilon(m, pol, zbar), abs=1e-12)
    assert eps == pytest.approx(50.0)


def test_epsilon_open_then_listen():
    m = make_env("tiger", 3)
    b = Belief.prior(m)
    pol = constant_policy(m, LISTEN, 3)
    zbar = obs_subsets({History((OPEN_LEFT,), ()): {1}, History((OPEN_LEFT, LISTEN), (1,)): {0}})
    eps = epsilon_obs_action(m, b, OPEN_LEFT, pol, zbar)
    ref = brute_epsilon(m, PolicyTree(OPEN_LEFT, pol.children), zbar)
    assert eps == pytest.approx(ref, abs=1e-12)
    assert epsilon_obs_action(m, b, LISTEN, pol, zbar) == epsilon_obs(m, b, pol, zbar)


def test_epsilon_matches_enumeration_random():
    rng = np.random.default_rng(21)
    for _ in range(60):
        m = random_model(rng, discount=float(rng.choice([1.0, 0.9])))
        pol = random_policy(m, rng)
        zbar = random_zbar(m, rng)
        eps = epsilon_obs(m, Belief.prior(m), pol, zbar)
        assert eps == pytest.approx(brute_epsilon(m, pol, zbar), abs=1e-9)


def test_simplified_value_sandwich_random():
    rng = np.random.default_rng(22)
    for _ in range(100):
        m = random_model(rng)
        b = Belief.prior(m)
        pol = random_policy(m, rng)
        zbar = random_zbar(m, rng)
        v = exact_policy_value(m, b, pol)
        vbar = simplified_value(m, b, pol, zbar)
        eps = epsilon_obs(m, b, pol, zbar)
        assert abs(v - vbar) <= eps + 1e-9


def test_udb_full_zbar_is_exact_q():
    m = make_env("baby", 3)
    b = Belief.prior(m)
    pol = exact_optimal_value(m, b)[2]
    for a in range(m.num_actions):
        assert udb(m, b, a, pol, all_obs(m)) == pytest.approx(exact_policy_q(m, b, a, pol), abs=1e-9)


def test_udb_without_children():
    m = make_env("tiger", 3)
    b = Belief.prior(m)
    pol = constant_policy(m, LISTEN, 3)
    for a in range(3):
        assert udb(m, b, a, pol, no_obs) == pytest.approx(belief_reward(m, b, a) + m.r_max * 2)


def test_udb_dominates_optimal_q():
    m = make_env("tiger", 2)
    b = Belief.prior(m)
    _, _, best = exact_optimal_value(m, b)
    q_star = exact_q_values(m, b)
    rng = np.random.default_rng(4)
    for _ in range(20):
        zbar = random_zbar(m, rng, keep_p=0.5)
        for a in range(m.num_actions):
            assert udb(m, b, a, best, zbar) >= q_star[a] - 1e-9


# -- root bounds -----------------------------------------------------------------


def test_bound_config_default():
    m = make_env("tiger", 3)
    cfg = BoundConfig.default(m)
    assert [cfg.vmax(t) for t in range(4)] == [300.0, 200.0, 100.0, 0.0]
    assert cfg.vmin(0) == -300.0
    assert cfg.vmax(7) == 0.0


def test_closed_form_extremes():
    m = make_env("tiger", 2)
    cfg = BoundConfig.default(m)
    pol = constant_policy(m, LISTEN, 2)
    assert root_bounds_closed(m, pol, [], cfg) == BoundInterval(cfg.vmin(0), cfg.vmax(0))
    full = [tau for tau, _ in enumerate_trajectories(m, pol)]
    iv = root_bounds_closed(m, pol, full, cfg)
    v = exact_policy_value(m, Belief.prior(m), pol)
    assert iv.lower == pytest.approx(v, abs=1e-9)
    assert iv.upper == pytest.approx(v, abs=1e-9)


def test_closed_form_hear_left_subtree():
    m = make_env("tiger", 2)
    cfg = BoundConfig.default(m)
    pol = constant_policy(m, LISTEN, 2)
    kept = [tau for tau, _ in enumerate_trajectories(m, pol) if tau.t == 0 or tau.history.observations == (0,)]
    iv = root_bounds_closed(m, pol, kept, cfg)
    assert iv.contains(exact_policy_value(m, Belief.prior(m), pol), 1e-9)
    assert iv.width == pytest.approx(0.5 * (cfg.vmax(1) - cfg.vmin(1)))


def test_closed_form_rejects_gaps():
    m = make_env("tiger", 2)
    cfg = BoundConfig.default(m)
    pol = constant_policy(m, LISTEN, 2)
    deep = [tau for tau, _ in enumerate_trajectories(m, pol) if tau.t == 1]
    with pytest.raises(PrefixViolation):
        root_bounds_closed(m, pol, deep, cfg)


def test_single_node_tree_matches_closed_form():
    m = make_env("baby", 3)
    cfg = BoundConfig.default(m)
    pol = constant_policy(m, 0, 3)
    taus = [tau for tau, _ in enumerate_trajectories(m, pol) if tau.t == 0]
    tree = tree_from(m, pol, taus)
    rec = root_bounds_recursive(tree.root, cfg, pol)
    closed = root_bounds_closed(m, pol, taus, cfg)
    assert (rec.lower, rec.upper) == pytest.approx((closed.lower, closed.upper), abs=1e-9)
    empty = BeliefTree(m, Belief.prior(m))
    assert optimal_root_bounds(empty.root, cfg, m.num_actions) == BoundInterval(cfg.vmin(0), cfg.vmax(0))


def _check_sandwich(m, rng, n_sets):
    b = Belief.prior(m)
    cfg = BoundConfig.default(m)
    v_star = exact_optimal_value(m, b)[0]
    for _ in range(n_sets):
        pol = random_policy(m, rng)
        taus = retained_subset(m, pol, rng, keep_p=float(rng.uniform(0.3, 1.0)))
        closed = root_bounds_closed(m, pol, taus, cfg)
        v = exact_policy_value(m, b, pol)
        assert closed.contains(v, 1e-9)
        tree = tree_from(m, pol, taus)
        rec = root_bounds_recursive(tree.root, cfg, pol)
        assert rec.lower == pytest.approx(closed.lower, abs=1e-9)
        assert rec.upper == pytest.approx(closed.upper, abs=1e-9)
        width = closed_form_width(slice_masses(taus, m.last_step), cfg)
        assert closed.width == pytest.approx(width, abs=1e-9)
        opt = optimal_root_bounds(random_tree(m, rng).root, cfg, m.num_actions)
        assert opt.contains(v_star, 1e-9)


def test_root_sandwich_benchmarks():
    rng = np.random.default_rng(31)
    for name in ("tiger", "baby", "lightdark"):
        for h in (1, 2, 3):
            _check_sandwich(make_env(name, h), rng, 15)


def test_root_sandwich_random_models():
    rng = np.random.default_rng(32)
    for _ in range(30):
        _check_sandwich(random_model(rng, discount=float(rng.choice([1.0, 0.95]))), rng, 5)


def test_full_tree_collapses_to_optimum():
    for name, h in (("tiger", 2), ("baby", 3), ("lightdark", 2)):
        m = make_env(name, h)
        b = Belief.prior(m)
        cfg = BoundConfig.default(m)
        tree = BeliefTree(m, b)
        # every open-loop action sequence, each contributing all its trajectories
        seqs = [[]]
        for _ in range(h):
            seqs = [s + [a] for s in seqs for a in range(m.num_actions)]
        for seq in seqs:
            pol = _open_loop(m, seq)
            for tau, _ in enumerate_trajectories(m, pol):
                tree.insert(tau, final_action=pol.action_at(tau.history))
        q = exact_q_values(m, b)
        ivs = optimal_action_bounds(tree.root, cfg, m.num_actions)
        for a in range(m.num_actions):
            assert ivs[a].lower == pytest.approx(q[a], abs=1e-9)
            assert ivs[a].upper == pytest.approx(q[a], abs=1e-9)


def _open_loop(m, seq):
    node = PolicyTree(seq[-1])
    for a in reversed(seq[:-1]):
        node = PolicyTree(a, {z: node for z in range(m.num_obs)})
    return node


# -- pruning --------------------------------------------------------------------------


def test_prune_disjoint():
    assert prune_decision({1: BoundInterval(3, 5), 2: BoundInterval(-1, 2)}) == {2}


def test_prune_four_actions():
    ivs = {
        1: BoundInterval(2.0, 6.0),
        2: BoundInterval(-3.0, 1.0),
        3: BoundInterval(3.0, 8.0),
        4: BoundInterval(0.0, 2.5),
    }
    assert prune_decision(ivs) == {2, 4}


def test_prune_overlap_and_ties():
    same = {a: BoundInterval(-1.0, 1.0) for a in range(3)}
    assert prune_decision(same) == set()
    touching = {0: BoundInterval(1.0, 2.0), 1: BoundInterval(0.0, 1.0)}
    assert prune_decision(touching) == set()
    points = {0: BoundInterval(1.0, 1.0), 1: BoundInterval(1.0, 1.0)}
    assert prune_decision(points) == set()


def test_prune_never_removes_everything():
    with pytest.raises(ValueError):
        prune_decision({})
    assert prune_decision({0: BoundInterval(math.nan, math.nan)}) == set()
