"""Random models, policies and retained sets shared by the property tests."""

from __future__ import annotations

import numpy as np

from certipomdp.core import Belief, History, TabularPomdp, Trajectory
from certipomdp.oracle import PolicyTree, enumerate_trajectories
from certipomdp.tree import BeliefTree


def random_model(rng: np.random.Generator, max_states=4, max_actions=3, max_obs=3, max_last=3,
                 sparse=True, discount=1.0) -> TabularPomdp:
    s = int(rng.integers(1, max_states + 1))
    a = int(rng.integers(1, max_actions + 1))
    z = int(rng.integers(1, max_obs + 1))
    last = int(rng.integers(0, max_last + 1))

    def rows(shape):
        m = rng.random(shape)
        if sparse:
            m = m * (rng.random(shape) < 0.7)
        flat = m.reshape(-1, shape[-1])
        for row in flat:
            if row.sum() == 0.0:
                row[rng.integers(shape[-1])] = 1.0
        return m / m.sum(axis=-1, keepdims=True)

    return TabularPomdp(
        transition=rows((s, a, s)),
        observation=rows((s, z)),
        reward=np.round(rng.uniform(-10, 10, (s, a)), 3),
        prior=rows((s,)),
        last_step=last,
        discount=discount,
    )


def random_policy(model: TabularPomdp, rng: np.random.Generator, steps: int | None = None) -> PolicyTree:
    steps = model.last_step + 1 if steps is None else steps
    node = PolicyTree(int(rng.integers(model.num_actions)))
    if steps > 1:
        node.children = {z: random_policy(model, rng, steps - 1) for z in range(model.num_obs)}
    return node


def random_zbar(model: TabularPomdp, rng: np.random.Generator, keep_p=0.6):
    """Memoized random observation subset per propagated history."""
    table: dict[History, frozenset[int]] = {}

    def zbar(h: History):
        if h not in table:
            table[h] = frozenset(z for z in range(model.num_obs) if rng.random() < keep_p)
        return table[h]

    return zbar


def retained_subset(
    model: TabularPomdp, policy: PolicyTree, rng: np.random.Generator, keep_p=0.7, b0: Belief | None = None
) -> list[Trajectory]:
    """Random prefix-closed subset of the policy's positive-weight trajectories."""
    kept: list[Trajectory] = []
    keys = set()
    for tau, _w in enumerate_trajectories(model, policy, b0=b0):
        parent = (tau.states[:-1], tau.history.actions[:-1], tau.history.observations[:-1])
        if tau.t > 0 and parent not in keys:
            continue
        if rng.random() < keep_p:
            kept.append(tau)
            keys.add((tau.states, tau.history.actions, tau.history.observations))
    return kept


def tree_from(model: TabularPomdp, policy: PolicyTree, taus, b0: Belief | None = None) -> BeliefTree:
    """Search tree holding exactly ``taus``, each charged the policy's action at its end."""
    tree = BeliefTree(model, b0 or Belief.prior(model))
    for tau in taus:
        a = policy.action_at(tau.history)
        tree.insert(tau, final_action=a)
    return tree


def random_tree(model: TabularPomdp, rng: np.random.Generator, keep_p=0.7, b0: Belief | None = None) -> BeliefTree:
    """Tree built from random trajectories of several random policies (not policy-closed)."""
    tree = BeliefTree(model, b0 or Belief.prior(model))
    for _ in range(3):
        pol = random_policy(model, rng)
        for tau in retained_subset(model, pol, rng, keep_p, b0):
            tree.insert(tau, final_action=pol.action_at(tau.history))
    return tree
