"""Brute-force ground truth: exact Bellman recursion over the full belief tree."""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import (
    Belief,
    History,
    TabularPomdp,
    Trajectory,
    belief_reward,
    belief_update,
    observation_marginals,
    trajectory_extend,
)

MAX_EXPANSIONS = 10**6


class TooLarge(RuntimeError):
    """The requested exact computation exceeds the expansion guard."""


class IncompletePolicy(ValueError):
    """A reachable observation branch has no policy subtree."""


@dataclass
class PolicyTree:
    action: int
    children: dict[int, "PolicyTree"] = field(default_factory=dict)

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children.values()), default=0)

    def action_at(self, history: History, start: int = 0) -> int | None:
        """Action prescribed after ``history`` (relative to this tree's root)."""
        node = self
        for z in history.observations[start:]:
            node = node.children.get(z)
            if node is None:
                return None
        return node.action


def constant_policy(model: TabularPomdp, action: int, steps: int) -> PolicyTree:
    """Open-loop policy that always plays ``action`` for ``steps`` decisions."""
    node = PolicyTree(action)
    if steps > 1:
        node.children = {z: constant_policy(model, action, steps - 1) for z in range(model.num_obs)}
    return node


def tree_size_estimate(model: TabularPomdp, t: int) -> int:
    """Upper bound on belief nodes visited by the full recursion from time t."""
    branching = model.num_actions * model.num_obs
    total, level = 0, 1
    for _ in range(model.last_step - t + 1):
        total += level
        level *= branching
    return total


def check_size(model: TabularPomdp, t: int, limit: int = MAX_EXPANSIONS) -> None:
    n = tree_size_estimate(model, t)
    if n > limit:
        raise TooLarge(
            f"full belief tree from t={t} has up to {n} nodes (limit {limit}); "
            f"reduce the horizon (last step {model.last_step}) or the observation count"
        )


def exact_q_values(model: TabularPomdp, b: Belief) -> list[float]:
    """Q*(b, a) for every action."""
    check_size(model, b.t)
    return [_q(model, b, a, {}) for a in range(model.num_actions)]


def exact_optimal_value(model: TabularPomdp, b: Belief) -> tuple[float, int, PolicyTree]:
    """V*(b), the optimal first action (lowest id on ties) and the argmax policy tree."""
    check_size(model, b.t)
    v, tree = _solve(model, b, {})
    return v, tree.action, tree


def _q(model, b, a, memo):
    q = belief_reward(model, b, a)
    if b.t < model.last_step:
        for z, pz in enumerate(observation_marginals(model, b, a)):
            if pz > 0.0:
                post, _ = belief_update(model, b, a, z)
                q += model.discount * pz * _solve(model, post, memo)[0]
    return q


def _solve(model, b, memo):
    key = (tuple(b.probs.items()), b.t)
    hit = memo.get(key)
    if hit is not None:
        return hit
    best_v, best_a = None, 0
    for a in range(model.num_actions):
        q = _q(model, b, a, memo)
        if best_v is None or q > best_v:
            best_v, best_a = q, a
    tree = PolicyTree(best_a)
    if b.t < model.last_step:
        for z, pz in enumerate(observation_marginals(model, b, best_a)):
            if pz > 0.0:
                post, _ = belief_update(model, b, best_a, z)
                tree.children[z] = _solve(model, post, memo)[1]
    memo[key] = (best_v, tree)
    return best_v, tree


def exact_policy_value(model: TabularPomdp, b: Belief, policy: PolicyTree) -> float:
    check_size(model, b.t)
    return _policy_value(model, b, policy)


def _policy_value(model, b, node):
    a = node.action
    v = belief_reward(model, b, a)
    if b.t < model.last_step:
        for z, pz in enumerate(observation_marginals(model, b, a)):
            if pz <= 0.0:
                continue
            child = node.children.get(z)
            if child is None:
                raise IncompletePolicy(f"no policy for observation {z} at t={b.t + 1}")
            post, _ = belief_update(model, b, a, z)
            v += model.discount * pz * _policy_value(model, post, child)
    return v


def exact_policy_q(model: TabularPomdp, b: Belief, a: int, policy: PolicyTree) -> float:
    """Q^pi(b, a): play ``a`` then follow ``policy.children[z]``."""
    return exact_policy_value(model, b, PolicyTree(a, policy.children))


def enumerate_trajectories(
    model: TabularPomdp, policy: PolicyTree, t_max: int | None = None, b0: Belief | None = None
) -> list[tuple[Trajectory, float]]:
    """All positive-weight trajectories under ``policy`` for every time t <= t_max.

    Each returned weight is the trajectory probability; weights of one time
    slice sum to one.
    """
    b0 = b0 or Belief.prior(model)
    t_max = model.last_step if t_max is None else min(t_max, model.last_step)
    check_size(model, b0.t)
    out: list[tuple[Trajectory, float]] = []
    frontier = []
    for x0, p in b0.probs.items():
        tau = Trajectory.start(b0, x0)
        frontier.append((tau, policy))
        out.append((tau, tau.weight))
    for _ in range(max(t_max - b0.t, 0)):
        nxt = []
        for tau, node in frontier:
            if node is None:
                raise IncompletePolicy("policy tree is shallower than t_max")
            a = node.action
            for y, _p in model.succ[tau.last_state][a]:
                for z, q in enumerate(model.obs_lik[y]):
                    if q <= 0.0:
                        continue
                    ext = trajectory_extend(model, tau, a, z, y)
                    if ext.weight > 0.0:
                        nxt.append((ext, node.children.get(z)))
                        out.append((ext, ext.weight))
        frontier = nxt
    return out


def count_positive_trajectories(model: TabularPomdp, b0: Belief | None = None) -> int:
    """Number of positive-weight full-length trajectories over all action sequences."""
    b0 = b0 or Belief.prior(model)
    check_size(model, b0.t)
    count = {x: 1 for x in b0.probs}
    for _ in range(b0.t, model.last_step):
        nxt: dict[int, int] = {}
        for x, c in count.items():
            for a in range(model.num_actions):
                for y, _p in model.succ[x][a]:
                    nz = sum(1 for q in model.obs_lik[y] if q > 0.0)
                    nxt[y] = nxt.get(y, 0) + c * nz
        count = nxt
    return sum(count.values())
