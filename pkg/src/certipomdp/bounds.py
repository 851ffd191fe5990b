"""Deterministic value bounds from partially expanded belief trees.

Two families live here:

* observation-simplification bounds over exact beliefs: the simplified
  value of a policy restricted to retained observation branches, the slack
  ``epsilon`` that brackets the true value, and the upper deterministic
  bound (UDB) built from them;
* root bounds from a retained set of weighted trajectories, in closed form
  and in the recursive form evaluated on search-tree nodes, for a fixed
  policy and maximized over actions.

Time indices are absolute: a node at time ``t`` uses ``vmax(t)``, the bound
on any reward sum collected from ``t`` to the last step inclusive.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Collection, Iterable, Mapping
from dataclasses import dataclass

from .core import Belief, History, TabularPomdp, Trajectory, belief_reward, belief_update, observation_marginals
from .oracle import IncompletePolicy, PolicyTree

PRUNE_SLACK = 1e-12

ObsSubsets = Callable[[History], Collection[int]]
"""Maps a propagated history (ends with an action) to its retained observations."""


class PrefixViolation(ValueError):
    """A retained trajectory set is missing the prefix of one of its members."""


@dataclass(frozen=True)
class BoundInterval:
    lower: float
    upper: float

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, v: float, tol: float = 0.0) -> bool:
        return self.lower - tol <= v <= self.upper + tol


@dataclass(frozen=True)
class BoundConfig:
    """Per-time-step continuation bounds and the discount.

    ``vmax_per_t(t)`` must upper-bound the (discounted) reward collected from
    time ``t`` through the last step, whatever the belief; likewise
    ``vmin_per_t`` from below.  Past the last step both are zero.
    """

    vmax_per_t: Callable[[int], float]
    vmin_per_t: Callable[[int], float]
    last_step: int
    discount: float = 1.0

    @classmethod
    def default(cls, model: TabularPomdp) -> "BoundConfig":
        """R_max times the (discounted) number of decision steps left."""
        T, g, r = model.last_step, model.discount, model.r_max

        def steps_left(t):
            n = T - t + 1
            if n <= 0:
                return 0.0
            return float(n) if g == 1.0 else (1.0 - g**n) / (1.0 - g)

        return cls(lambda t: r * steps_left(t), lambda t: -r * steps_left(t), T, g)

    def vmax(self, t: int) -> float:
        return 0.0 if t > self.last_step else self.vmax_per_t(t)

    def vmin(self, t: int) -> float:
        return 0.0 if t > self.last_step else self.vmin_per_t(t)

    def table(self) -> tuple[list[float], list[float]]:
        """vmax/vmin indexed by t = 0..last_step+1, for hot loops."""
        n = self.last_step + 2
        return [self.vmax(t) for t in range(n)], [self.vmin(t) for t in range(n)]


# -- observation subsets ----------------------------------------------------


def all_obs(model: TabularPomdp) -> ObsSubsets:
    full = frozenset(range(model.num_obs))
    return lambda _h: full


def no_obs(_h: History) -> Collection[int]:
    return frozenset()


def obs_subsets(mapping: Mapping[History, Collection[int]], default: Collection[int] = ()) -> ObsSubsets:
    return lambda h: mapping.get(h, default)


# -- observation-simplification bounds --------------------------------------


def _tail(model: TabularPomdp, t: int) -> float:
    """sum_{j=1}^{T-t} gamma^j: weight of the reward steps strictly after t."""
    n = model.last_step - t
    g = model.discount
    if n <= 0:
        return 0.0
    return float(n) if g == 1.0 else g * (1.0 - g**n) / (1.0 - g)


def _retained(model, b, a, hist, zbar):
    keep = zbar(hist.act(a))
    marg = observation_marginals(model, b, a)
    return [(z, pz) for z, pz in enumerate(marg) if pz > 0.0 and z in keep]


def _child(node: PolicyTree, z: int, t: int) -> PolicyTree:
    child = node.children.get(z)
    if child is None:
        raise IncompletePolicy(f"no policy for retained observation {z} at t={t + 1}")
    return child


def _lost_steps(model, b, a, node, hist, zbar) -> float:
    """sum over later steps of (1 - retained mass), gamma-weighted."""
    if b.t >= model.last_step:
        return 0.0
    kept = _retained(model, b, a, hist, zbar)
    p_kept = sum(pz for _, pz in kept)
    out = (1.0 - p_kept) * _tail(model, b.t)
    h_a = hist.act(a)
    for z, pz in kept:
        child = _child(node, z, b.t)
        post, _ = belief_update(model, b, a, z)
        out += model.discount * pz * _lost_steps(model, post, child.action, child, h_a.observe(z), zbar)
    return out


def epsilon_obs_action(
    model: TabularPomdp, b: Belief, a: int, policy: PolicyTree, zbar: ObsSubsets,
    history: History = History(),
) -> float:
    """Slack between Q^pi(b, a) and its simplified counterpart.

    ``a`` is played first; ``policy.children[z]`` governs after observing z.
    """
    return model.r_max * max(_lost_steps(model, b, a, policy, history, zbar), 0.0)


def epsilon_obs(
    model: TabularPomdp, b: Belief, policy: PolicyTree, zbar: ObsSubsets, history: History = History()
) -> float:
    return epsilon_obs_action(model, b, policy.action, policy, zbar, history)


def simplified_q(
    model: TabularPomdp, b: Belief, a: int, policy: PolicyTree, zbar: ObsSubsets,
    history: History = History(),
) -> float:
    """Unnormalized action value summed over retained observation branches only."""
    q = belief_reward(model, b, a)
    if b.t >= model.last_step:
        return q
    h_a = history.act(a)
    for z, pz in _retained(model, b, a, history, zbar):
        child = _child(policy, z, b.t)
        post, _ = belief_update(model, b, a, z)
        q += model.discount * pz * simplified_q(model, post, child.action, child, zbar, h_a.observe(z))
    return q


def simplified_value(
    model: TabularPomdp, b: Belief, policy: PolicyTree, zbar: ObsSubsets, history: History = History()
) -> float:
    return simplified_q(model, b, policy.action, policy, zbar, history)


def udb(
    model: TabularPomdp, b: Belief, a: int, policy: PolicyTree, zbar: ObsSubsets,
    history: History = History(),
) -> float:
    """Upper deterministic bound: simplified Q plus its slack.

    With no retained branch this is r(b, a) + R_max * (remaining steps after t).
    """
    return simplified_q(model, b, a, policy, zbar, history) + epsilon_obs_action(
        model, b, a, policy, zbar, history
    )


# -- root bounds from retained trajectories ----------------------------------


def _traj_key(tau: Trajectory):
    return (tau.states, tau.history.actions, tau.history.observations)


def root_bounds_closed(
    model: TabularPomdp,
    policy: PolicyTree,
    trajectories: Iterable[Trajectory],
    cfg: BoundConfig,
    start_time: int = 0,
) -> BoundInterval:
    """Root interval for ``policy`` from a prefix-closed retained trajectory set.

    Trajectories start at the root (time ``start_time``); their weights are the
    unnormalized masses P(tau).  Unretained mass is charged at vmax/vmin of the
    first time step it goes missing.
    """
    taus = list(trajectories)
    keys = {_traj_key(t) for t in taus}
    if len(keys) != len(taus):
        raise PrefixViolation("retained set holds a trajectory twice")
    depth = model.last_step - start_time
    slice_mass = [0.0] * (depth + 2)
    value = 0.0
    g = cfg.discount
    for tau in taus:
        k = tau.t
        if k > depth:
            raise PrefixViolation(f"trajectory of length {k} exceeds the horizon")
        if k > 0:
            parent = (tau.states[:-1], tau.history.actions[:-1], tau.history.observations[:-1])
            if parent not in keys:
                raise PrefixViolation(f"prefix of trajectory {tau.states} is not retained")
        for j in range(k):
            prefix = History(tau.history.actions[:j], tau.history.observations[:j])
            if policy.action_at(prefix) != tau.history.actions[j]:
                raise ValueError(f"trajectory {tau.states} does not follow the policy")
        a = policy.action_at(tau.history)
        if a is None:
            raise IncompletePolicy(f"policy undefined after history {tau.history}")
        slice_mass[k] += tau.weight
        value += g**k * tau.weight * model.rewards[tau.last_state][a]
    for k in range(depth + 1):
        if slice_mass[k + 1] > slice_mass[k] + 1e-12:
            raise PrefixViolation(f"retained mass grows from slice {k} to {k + 1}")
    upper, lower = value, value
    missing0 = 1.0 - slice_mass[0]
    upper += cfg.vmax(start_time) * missing0
    lower += cfg.vmin(start_time) * missing0
    for k in range(depth + 1):
        gap = slice_mass[k] - slice_mass[k + 1]
        upper += g ** (k + 1) * cfg.vmax(start_time + k + 1) * gap
        lower += g ** (k + 1) * cfg.vmin(start_time + k + 1) * gap
    return BoundInterval(lower, upper)


def closed_form_width(
    slice_mass: list[float], cfg: BoundConfig, start_time: int = 0
) -> float:
    """Sum of retained-mass gaps times (vmax - vmin) per slice."""
    g = cfg.discount
    w = (1.0 - slice_mass[0]) * (cfg.vmax(start_time) - cfg.vmin(start_time))
    masses = list(slice_mass) + [0.0]
    for k in range(len(slice_mass)):
        t = start_time + k + 1
        w += g ** (k + 1) * (masses[k] - masses[k + 1]) * (cfg.vmax(t) - cfg.vmin(t))
    return w


# Recursive forms.  They read search-tree nodes by attribute: a history node
# has ``t``, ``mass`` and ``children`` (action -> action node); an action node
# has ``rbar``, ``mass`` and ``children`` (obs -> history node).


def _action_bounds(h, ha, cfg, child_u, child_l):
    t = h.t
    g = cfg.discount
    child_mass = sum(c.mass for c in ha.children.values()) if ha is not None else 0.0
    rbar = ha.rbar if ha is not None else 0.0
    m_a = ha.mass if ha is not None else 0.0
    head = h.mass - m_a
    tail = m_a - child_mass
    u = rbar + cfg.vmax(t) * head + g * (cfg.vmax(t + 1) * tail + child_u)
    l = rbar + cfg.vmin(t) * head + g * (cfg.vmin(t + 1) * tail + child_l)
    return u, l


def _policy_node_bounds(h, cfg, policy):
    if policy is not None:
        a = policy.action
    else:
        live = [a for a, ha in h.children.items() if ha.mass > 0.0]
        if len(live) > 1:
            raise ValueError("node has several visited actions; pass the policy to follow")
        a = live[0] if live else min(h.children, default=0)
    ha = h.children.get(a)
    cu = cl = 0.0
    if ha is not None:
        for z, child in ha.children.items():
            sub = policy.children.get(z) if policy is not None else None
            if policy is not None and sub is None:
                raise IncompletePolicy(f"policy has no branch for observation {z}")
            u, l = _policy_node_bounds(child, cfg, sub)
            cu += u
            cl += l
    return _action_bounds(h, ha, cfg, cu, cl)


def root_bounds_recursive(root, cfg: BoundConfig, policy: PolicyTree | None = None) -> BoundInterval:
    """Root interval of a fixed policy evaluated node by node on a search tree."""
    u, l = _policy_node_bounds(root, cfg, policy)
    missing = 1.0 - root.mass
    return BoundInterval(l + cfg.vmin(root.t) * missing, u + cfg.vmax(root.t) * missing)


def _optimal_node_bounds(h, cfg, num_actions):
    best_u = best_l = -math.inf
    for a in range(num_actions):
        ha = h.children.get(a)
        cu = cl = 0.0
        if ha is not None:
            for child in ha.children.values():
                u, l = _optimal_node_bounds(child, cfg, num_actions)
                cu += u
                cl += l
        u, l = _action_bounds(h, ha, cfg, cu, cl)
        best_u = max(best_u, u)
        best_l = max(best_l, l)
    return best_u, best_l


def optimal_action_bounds(root, cfg: BoundConfig, num_actions: int) -> dict[int, BoundInterval]:
    """Per-action root intervals, maximizing over actions below the root."""
    missing = 1.0 - root.mass
    out = {}
    for a in range(num_actions):
        ha = root.children.get(a)
        cu = cl = 0.0
        if ha is not None:
            for child in ha.children.values():
                u, l = _optimal_node_bounds(child, cfg, num_actions)
                cu += u
                cl += l
        u, l = _action_bounds(root, ha, cfg, cu, cl)
        out[a] = BoundInterval(l + cfg.vmin(root.t) * missing, u + cfg.vmax(root.t) * missing)
    return out


def optimal_root_bounds(root, cfg: BoundConfig, num_actions: int) -> BoundInterval:
    """Bounds on the optimal root value, maximizing over actions at every node."""
    ivs = optimal_action_bounds(root, cfg, num_actions).values()
    return BoundInterval(max(i.lower for i in ivs), max(i.upper for i in ivs))


# -- pruning -----------------------------------------------------------------


def prune_decision(intervals: Mapping[int, BoundInterval], slack: float = PRUNE_SLACK) -> set[int]:
    """Actions whose upper bound falls strictly below the best lower bound."""
    if not intervals:
        raise ValueError("need at least one interval")
    best_lower = max(iv.lower for iv in intervals.values())
    pruned = {a for a, iv in intervals.items() if iv.upper < best_lower - slack}
    if len(pruned) == len(intervals):
        keep = max(sorted(intervals), key=lambda a: intervals[a].lower)
        pruned.discard(keep)
    return pruned
