import io

import numpy as np
import pytest

from certipomdp.bounds import BoundConfig, optimal_action_bounds
from certipomdp.core import Belief, Trajectory
from certipomdp.environments import LISTEN, make_env
from certipomdp.oracle import constant_policy, enumerate_trajectories, exact_optimal_value
from certipomdp.tree import BeliefTree

from gen import random_model, random_policy, retained_subset


def _snapshot(tree):
    out = []

    def walk(h, key):
        out.append((key, round(h.mass, 12), round(h.upper, 9), round(h.lower, 9)))
        for a, ha in sorted(h.children.items()):
            out.append((key + (a,), round(ha.mass, 12), round(ha.rbar, 9), round(ha.upper, 9), round(ha.lower, 9)))
            for z, c in sorted(ha.children.items()):
                walk(c, key + (a, z))

    walk(tree.root, ())
    return out


def test_fwd_update_dedup_and_reward():
    m = make_env("tiger", 3)
    tree = BeliefTree(m, Belief.prior(m))
    tau = tree.add_root_state(0)
    h = tree.root
    ha = h.children[LISTEN]
    haz = tree.child(ha, 0, h)
    ext = tree.fwd_update(h, ha, haz, tau, 0, 0)
    assert ha.rbar == pytest.approx(0.5 * -1.0)
    assert ha.mass == 0.5
    assert haz.mass == pytest.approx(0.425)
    assert ext.weight == pytest.approx(0.425)
    before = _snapshot(tree)
    tree.add_root_state(0)
    tree.fwd_update(h, ha, haz, tau, 0, 0)
    assert _snapshot(tree) == before


def test_masses_match_enumeration():
    m = make_env("tiger", 3)
    pol = constant_policy(m, LISTEN, 3)
    taus = enumerate_trajectories(m, pol)
    tree = BeliefTree(m, Belief.prior(m))
    for tau, _ in taus:
        tree.insert(tau, final_action=LISTEN)
    sums: dict = {}
    for tau, w in taus:
        sums[tau.history.observations] = sums.get(tau.history.observations, 0.0) + w
    for obs, mass in sums.items():
        h = tree.root
        for z in obs:
            h = h.children[LISTEN].children[z]
        assert h.mass == pytest.approx(mass, abs=1e-12)
        assert h.children[LISTEN].mass == pytest.approx(mass, abs=1e-12)


def test_leaf_and_zero_gap_rules():
    m = make_env("tiger", 1)
    tree = BeliefTree(m, Belief.prior(m))
    for x in (0, 1):
        tree.insert(Trajectory.start(tree.belief, x), final_action=LISTEN)
    ha = tree.root.children[LISTEN]
    assert ha.upper == ha.lower == pytest.approx(ha.rbar) == pytest.approx(-1.0)
    m2 = make_env("tiger", 2)
    tree = BeliefTree(m2, Belief.prior(m2))
    for tau, _ in enumerate_trajectories(m2, constant_policy(m2, LISTEN, 2)):
        tree.insert(tau, final_action=LISTEN)
    for h in tree.root.children[LISTEN].children.values():
        leaf = h.children[LISTEN]
        assert leaf.upper == leaf.lower == pytest.approx(leaf.rbar)
        # unexplored siblings keep the full slack
        assert h.children[0].upper == pytest.approx(h.mass * tree.vmax[1])


def test_insertion_order_independent():
    rng = np.random.default_rng(7)
    for _ in range(20):
        m = random_model(rng)
        pol = random_policy(m, rng)
        taus = retained_subset(m, pol, rng)
        a = BeliefTree(m, Belief.prior(m))
        for tau in taus:
            a.insert(tau, final_action=pol.action_at(tau.history))
        b = BeliefTree(m, Belief.prior(m))
        for i in rng.permutation(len(taus)):
            tau = taus[i]
            b.insert(tau, final_action=pol.action_at(tau.history))
        assert _snapshot(a) == _snapshot(b)


def test_incremental_matches_recursive_and_monotone():
    rng = np.random.default_rng(8)
    for name, h in (("tiger", 3), ("baby", 3), ("lightdark", 2)):
        m = make_env(name, h)
        cfg = BoundConfig.default(m)
        v_star = exact_optimal_value(m, Belief.prior(m))[0]
        tree = BeliefTree(m, Belief.prior(m))
        prev = tree.root_interval()
        for _ in range(8):
            pol = random_policy(m, rng)
            for tau in retained_subset(m, pol, rng, keep_p=0.5):
                tree.insert(tau, final_action=pol.action_at(tau.history))
                iv = tree.root_interval()
                assert iv.upper <= prev.upper + 1e-9 and iv.lower >= prev.lower - 1e-9
                assert iv.contains(v_star, 1e-9)
                prev = iv
            ref = optimal_action_bounds(tree.root, cfg, m.num_actions)
            for a, got in tree.root_intervals().items():
                assert got.lower == pytest.approx(ref[a].lower, abs=1e-9)
                assert got.upper == pytest.approx(ref[a].upper, abs=1e-9)


def test_refresh_is_idempotent():
    rng = np.random.default_rng(9)
    m = make_env("baby", 3)
    tree = BeliefTree(m, Belief.prior(m))
    pol = random_policy(m, rng)
    for tau in retained_subset(m, pol, rng):
        tree.insert(tau, final_action=pol.action_at(tau.history))
    before = _snapshot(tree)
    tree.refresh()
    assert _snapshot(tree) == before


def test_dump_lists_visited_nodes():
    m = make_env("tiger", 2)
    tree = BeliefTree(m, Belief.prior(m))
    for tau, _ in enumerate_trajectories(m, constant_policy(m, LISTEN, 2)):
        tree.insert(tau, final_action=LISTEN)
    buf = io.StringIO()
    tree.dump(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("h:root 0 1 ")
    assert sum(1 for ln in lines if ln.strip().startswith("a:")) == 3
    assert sum(1 for ln in lines if ln.strip().startswith("h:")) == 3
