"""Online planners: POMCP, DB-POMCP, RB-POMCP, the full-belief UDB search, and the exact oracle."""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field
from typing import Callable

from .bounds import BoundConfig, BoundInterval, prune_decision
from .core import (
    Belief,
    TabularPomdp,
    belief_reward,
    belief_update,
    extend_trajectory_id,
    observation_marginals,
    root_trajectory_id,
)
from .oracle import MAX_EXPANSIONS, TooLarge, exact_optimal_value, exact_q_values
from .tree import BeliefTree

SOLVERS = ("pomcp", "db-pomcp", "rb-pomcp", "udb-full", "exact")
RB_DESCENTS = ("sample", "bound")

TraceHook = Callable[[int, int, float, float, float], None]
"""Called as hook(iteration, node_depth, P_h, U, L)."""


class CertificationFailure(AssertionError):
    pass


@dataclass
class SolverConfig:
    solver_kind: str = "db-pomcp"
    iterations_max: int | None = 1000
    time_budget_ms: float | None = None
    uct_c: float = 1.0
    seed: int = 0
    bound_cfg: BoundConfig | None = None
    stop_on_certified: bool = True
    width_tol: float = 1e-9
    rb_descent: str = "sample"

    def __post_init__(self):
        if self.solver_kind not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver_kind!r}; choose from {SOLVERS}")
        if self.rb_descent not in RB_DESCENTS:
            raise ValueError(f"rb_descent must be one of {RB_DESCENTS}")
        if self.iterations_max is None and self.time_budget_ms is None:
            raise ValueError("set iterations_max or time_budget_ms")
        if self.uct_c < 0:
            raise ValueError("uct_c must be non-negative")


@dataclass
class PlanResult:
    chosen_action: int
    root_interval: BoundInterval
    certified_optimal: bool
    iterations_used: int
    wall_ms: float
    intervals: dict[int, BoundInterval]
    pruned: set[int] = field(default_factory=set)
    tree: object = None

    def unpruned(self) -> list[int]:
        return [a for a in sorted(self.intervals) if a not in self.pruned]


def _budget(cfg: SolverConfig):
    start = time.perf_counter()
    deadline = None if cfg.time_budget_ms is None else start + cfg.time_budget_ms / 1000.0
    limit = cfg.iterations_max

    def more(it):
        if limit is not None and it >= limit:
            return False
        return deadline is None or time.perf_counter() < deadline

    return start, more


def best_lower_action(intervals: dict[int, BoundInterval], pruned: set[int]) -> int:
    """Highest lower bound; ties to the higher upper bound, then the lowest id."""
    live = [a for a in sorted(intervals) if a not in pruned] or sorted(intervals)
    return max(live, key=lambda a: (intervals[a].lower, intervals[a].upper, -a))


# -- tree search planners -------------------------------------------------------


class _BoundDescent:
    """Deterministic refinement that adds at least one new trajectory record per call.

    Actions follow the highest upper bound.  At each node the largest
    contribution to the gap of the chosen action decides the move: missing
    prior mass at the root, trajectories at ``h`` not yet recorded under the
    action, unrecorded extensions, or the child with the widest interval.
    New trajectories are then rolled out greedily (highest upper bound,
    heaviest unrecorded extension) to the last step.
    """

    def __init__(self, tree: BeliefTree, b0: Belief):
        self.tree = tree
        self.model = tree.model
        self.b0 = b0
        self.members: dict[object, dict[int, tuple[int, float]]] = {}

    def _add_member(self, h, tid, x, w):
        self.members.setdefault(h, {})[tid] = (x, w)

    def _greedy(self, h, pruned):
        best, best_u = None, -math.inf
        for a, ha in h.children.items():
            if h is self.tree.root and a in pruned:
                continue
            if ha.upper > best_u:
                best, best_u = a, ha.upper
        return h.children[best]

    def _missing_extension(self, h, ha, only=None):
        """Heaviest positive-weight extension of a recorded trajectory not yet in a child."""
        m = self.model
        a = ha.action
        best = None
        for tid, (x, w) in self.members.get(h, {}).items():
            if only is not None and tid != only:
                continue
            if tid not in ha.ids:
                continue
            for y, p in m.succ[x][a]:
                for z, q in enumerate(m.obs_lik[y]):
                    if q <= 0.0:
                        continue
                    w2 = w * p * q
                    if w2 <= 0.0 or (best is not None and w2 <= best[0]):
                        continue
                    eid = extend_trajectory_id(tid, a, z, y)
                    child = ha.children.get(z)
                    if child is None or eid not in child.ids:
                        best = (w2, z, y, eid)
        return best

    def _record_child(self, h, ha, ext, path):
        w2, z, y, eid = ext
        child = self.tree.child(ha, z, h)
        self.tree.record_child(ha, child, eid, w2)
        self._add_member(child, eid, y, w2)
        path.append((h, ha))
        return child, eid, y, w2

    def _rollout(self, h, tid, x, w, path, pruned):
        tree = self.tree
        T = self.model.last_step
        while True:
            ha = self._greedy(h, pruned)
            tree.record_action(h, ha, tid, w, x)
            if h.t >= T:
                path.append((h, ha))
                return
            ext = self._missing_extension(h, ha, only=tid)
            if ext is None:
                path.append((h, ha))
                return
            h, tid, x, w = self._record_child(h, ha, ext, path)

    def step(self, pruned: set[int]) -> list:
        """Refine once; returns the touched (node, action) path, empty when stuck."""
        tree = self.tree
        root = tree.root
        T = self.model.last_step
        vmax, vmin, g = tree.vmax, tree.vmin, tree.gamma
        path: list = []
        h = root
        while True:
            t = h.t
            ha = self._greedy(h, pruned)
            comps = []
            if h is root:
                comps.append(((1.0 - root.mass) * (vmax[t] - vmin[t]), 0, "root"))
            comps.append(((vmax[t] - vmin[t]) * (h.mass - ha.mass), 1, "head"))
            if t < T:
                comps.append((g * (vmax[t + 1] - vmin[t + 1]) * (ha.mass - ha.child_mass), 2, "tail"))
                for z, c in sorted(ha.children.items()):
                    comps.append((g * (c.upper - c.lower), 3 + z, z))
            comps.sort(key=lambda c: (-c[0], c[1]))
            descended = False
            for val, _, kind in comps:
                if val <= 0.0:
                    break
                if kind == "root":
                    fresh = [(p, x) for x, p in sorted(self.b0.probs.items())
                             if p > 0.0 and root_trajectory_id(x) not in root.ids]
                    if not fresh:
                        continue
                    p, x = max(fresh, key=lambda e: e[0])
                    tid = root_trajectory_id(x)
                    root.ids.add(tid)
                    root.mass += p
                    self._add_member(root, tid, x, p)
                    self._rollout(root, tid, x, p, path, pruned)
                    return path
                if kind == "head":
                    fresh = [(w, tid, x) for tid, (x, w) in self.members.get(h, {}).items() if tid not in ha.ids]
                    if not fresh:
                        continue
                    w, tid, x = max(fresh, key=lambda e: e[0])
                    self._rollout(h, tid, x, w, path, pruned)
                    return path
                if kind == "tail":
                    ext = self._missing_extension(h, ha)
                    if ext is None:
                        continue
                    child, eid, y, w2 = self._record_child(h, ha, ext, path)
                    self._rollout(child, eid, y, w2, path, pruned)
                    return path
                path.append((h, ha))
                h = ha.children[kind]
                descended = True
                break
            if not descended:
                return []


def _tree_plan(model: TabularPomdp, b0: Belief, cfg: SolverConfig, kind: str, trace: TraceHook | None):
    rng = random.Random(cfg.seed)
    tree = BeliefTree(model, b0, cfg.bound_cfg)
    root = tree.root
    T = model.last_step
    g = tree.gamma
    vmax, vmin = tree.vmax, tree.vmin
    rewards, obs_lik, trans_lik = model.rewards, model.obs_lik, model.trans_lik
    A = model.num_actions
    c_uct = cfg.uct_c * abs(vmax[root.t])
    prior_items = sorted(b0.probs.items())
    prior_states = [x for x, _ in prior_items]
    prior_cdf, acc = [], 0.0
    for _, p in prior_items:
        acc += p
        prior_cdf.append(acc)
    prior_cdf = [c / acc for c in prior_cdf]
    use_bounds_for_actions = kind == "rb-pomcp"
    prunes = kind in ("db-pomcp", "rb-pomcp")
    pruned: set[int] = set()
    log = math.log
    sqrt = math.sqrt

    start, more = _budget(cfg)
    it = 0
    descent = _BoundDescent(tree, b0) if kind == "rb-pomcp" and cfg.rb_descent == "bound" else None
    while more(it):
        if descent is not None:
            touched = descent.step(pruned)
            if not touched:
                break
            for h, ha in reversed(touched):
                h.visits += 1
                ha.visits += 1
                tree.bwd_update(h, ha)
            it += 1
        else:
            u = rng.random()
            i = 0
            while i < len(prior_cdf) - 1 and prior_cdf[i] <= u:
                i += 1
            x = prior_states[i]
            tid = root_trajectory_id(x)
            w = b0.probs[x]
            if tid not in root.ids:
                root.ids.add(tid)
                root.mass += w

            path = []
            h = root
            t = root.t
            while True:
                children = h.children
                if use_bounds_for_actions:
                    vt, vn = vmax[t], vmax[t + 1]
                    hm = h.mass
                    best, best_u = None, -math.inf
                    for a in range(A):
                        if h is root and a in pruned:
                            continue
                        ha = children[a]
                        m = ha.mass
                        val = ha.rbar + vt * (hm - m) + g * (vn * (m - ha.child_mass) + ha.child_u)
                        if val > best_u:
                            best, best_u = a, val
                    a = best
                else:
                    a = None
                    best_v = -math.inf
                    ln_n = log(h.visits) if h.visits > 0 else 0.0
                    for b in range(A):
                        if h is root and b in pruned:
                            continue
                        ha = children[b]
                        if ha.visits == 0:
                            a = b
                            break
                        val = ha.qmean + c_uct * sqrt(ln_n / ha.visits)
                        if val > best_v:
                            a, best_v = b, val
                ha = children[a]
                if tid not in ha.ids:
                    ha.ids.add(tid)
                    ha.mass += w
                    ha.rbar += w * rewards[x][a]
                r = rewards[x][a]
                if t >= T:
                    path.append((h, ha, r))
                    break
                y = model.sample_next_state(x, a, rng)
                z = model.sample_obs(y, rng)
                w = w * obs_lik[y][z] * trans_lik[x][a][y]
                tid = extend_trajectory_id(tid, a, z, y)
                haz = ha.children.get(z)
                if haz is None:
                    haz = ha.children[z] = tree.new_node(t + 1, h.depth + 1)
                if tid not in haz.ids:
                    haz.ids.add(tid)
                    haz.mass += w
                    ha.child_mass += w
                path.append((h, ha, r))
                h, x, t = haz, y, t + 1

            ret = 0.0
            for h, ha, r in reversed(path):
                ret = r + g * ret
                h.visits += 1
                ha.visits += 1
                ha.qmean += (ret - ha.qmean) / ha.visits
                tree.bwd_update(h, ha)
            it += 1

        if prunes or trace is not None:
            intervals = tree.root_intervals()
            if prunes:
                newly = prune_decision(intervals) - pruned
                if newly:
                    pruned |= newly
                    for a in newly:
                        root.children[a].pruned = True
            if trace is not None:
                ri = tree.root_interval()
                trace(it, 0, root.mass, ri.upper, ri.lower)
            if prunes:
                if cfg.stop_on_certified and len(pruned) == A - 1:
                    break
                best = max(intervals[a].upper for a in range(A) if a not in pruned)
                if best - max(iv.lower for iv in intervals.values()) <= cfg.width_tol:
                    break

    intervals = tree.root_intervals()
    survivors = set(range(A)) - prune_decision(intervals)
    if kind == "pomcp":
        visited = [a for a in range(A) if root.children[a].visits > 0]
        chosen = max(visited, key=lambda a: (root.children[a].qmean, -a)) if visited else 0
        certified = survivors == {chosen}
        pruned_out: set[int] = set()
    else:
        pruned |= set(range(A)) - survivors
        chosen = best_lower_action(intervals, pruned)
        certified = len(pruned) == A - 1
        pruned_out = pruned
    wall = (time.perf_counter() - start) * 1000.0
    return PlanResult(chosen, tree.root_interval(), certified, it, wall, intervals, pruned_out, tree)


def pomcp_plan(model, b0, cfg, trace=None) -> PlanResult:
    """UCT search; final action by highest mean return.  Bounds are tracked but unused."""
    return _tree_plan(model, b0, cfg, "pomcp", trace)


def db_pomcp_plan(model, b0, cfg, trace=None) -> PlanResult:
    """UCT exploration, root pruning, final action by highest lower bound."""
    return _tree_plan(model, b0, cfg, "db-pomcp", trace)


def rb_pomcp_plan(model, b0, cfg, trace=None) -> PlanResult:
    """Actions by highest upper bound everywhere; states and observations sampled."""
    return _tree_plan(model, b0, cfg, "rb-pomcp", trace)


# -- full-belief UDB search ----------------------------------------------------------


class UdbActionNode:
    __slots__ = ("action", "reward", "order", "marginals", "children", "upper", "lower", "qbar", "eps")

    def __init__(self, action, reward, marginals):
        self.action = action
        self.reward = reward
        self.marginals = marginals
        # expansion order: descending marginal, ties to the lower observation id
        self.order = sorted((z for z, p in enumerate(marginals) if p > 0.0), key=lambda z: (-marginals[z], z))
        self.children: dict[int, UdbBeliefNode] = {}
        self.upper = self.lower = self.qbar = self.eps = 0.0

    @property
    def complete(self) -> bool:
        return len(self.children) == len(self.order)


class UdbBeliefNode:
    __slots__ = ("belief", "actions", "upper", "lower", "qbar", "eps", "best")

    def __init__(self, belief):
        self.belief = belief
        self.actions: list[UdbActionNode] = []
        self.upper = self.lower = self.qbar = self.eps = 0.0
        self.best = 0


class UdbSearch:
    """Exact-belief search that branches on a growing subset of observations.

    Every visited belief expands all actions.  An action value is bracketed
    by the simplified value over retained observations plus (or minus) the
    continuation bound on the probability mass of unretained ones; the upper
    end is the UDB of the UDB-greedy policy.
    """

    def __init__(self, model: TabularPomdp, b0: Belief, cfg: BoundConfig | None = None,
                 max_nodes: int = MAX_EXPANSIONS):
        self.model = model
        self.cfg = cfg or BoundConfig.default(model)
        self.max_nodes = max_nodes
        self.num_nodes = 0
        self.root = self._new_node(b0)

    def _new_node(self, b: Belief) -> UdbBeliefNode:
        self.num_nodes += 1
        if self.num_nodes > self.max_nodes:
            raise TooLarge(f"belief search exceeded {self.max_nodes} nodes")
        m = self.model
        node = UdbBeliefNode(b)
        last = b.t >= m.last_step
        for a in range(m.num_actions):
            marg = [0.0] * m.num_obs if last else observation_marginals(m, b, a)
            node.actions.append(UdbActionNode(a, belief_reward(m, b, a), marg))
        self._backup(node)
        return node

    def _backup_action(self, t: int, an: UdbActionNode) -> None:
        g = self.cfg.discount
        kept = 0.0
        su = sl = sq = se = 0.0
        for z, child in an.children.items():
            p = an.marginals[z]
            kept += p
            su += p * child.upper
            sl += p * child.lower
            sq += p * child.qbar
            se += p * child.eps
        lost = max(1.0 - kept, 0.0) if an.order else 0.0
        an.upper = an.reward + g * (su + lost * self.cfg.vmax(t + 1))
        an.lower = an.reward + g * (sl + lost * self.cfg.vmin(t + 1))
        an.qbar = an.reward + g * sq
        an.eps = g * (se + lost * self.cfg.vmax(t + 1))

    def _backup(self, node: UdbBeliefNode) -> None:
        t = node.belief.t
        for an in node.actions:
            self._backup_action(t, an)
        best = max(node.actions, key=lambda an: (an.upper, -an.action))
        node.best = best.action
        node.upper = best.upper
        node.lower = max(an.lower for an in node.actions)
        node.qbar, node.eps = best.qbar, best.eps

    def root_intervals(self) -> dict[int, BoundInterval]:
        return {an.action: BoundInterval(an.lower, an.upper) for an in self.root.actions}

    def step(self, allowed: set[int] | None = None) -> bool:
        """Expand one observation branch; False when nothing is left to refine."""
        path = []
        node = self.root
        while True:
            cands = [an for an in node.actions if node is not self.root or allowed is None or an.action in allowed]
            an = max(cands, key=lambda an: (an.upper, -an.action))
            path.append(node)
            if an.upper - an.lower <= 0.0 or not an.order:
                return False
            if not an.complete:
                z = an.order[len(an.children)]
                post, _ = belief_update(self.model, node.belief, an.action, z)
                an.children[z] = self._new_node(post)
                break
            z = max(an.order, key=lambda z: (an.marginals[z] * (an.children[z].upper - an.children[z].lower), -z))
            child = an.children[z]
            if child.upper - child.lower <= 0.0:
                return False
            node = child
        for n in reversed(path):
            self._backup(n)
        return True

    def greedy_policy(self):
        """UDB-greedy policy over the retained branches, with its observation subsets."""
        from .core import History
        from .oracle import PolicyTree

        subsets: dict[History, frozenset[int]] = {}

        def walk(node, hist):
            a = node.best
            an = node.actions[a]
            pt = PolicyTree(a)
            h_a = hist.act(a)
            subsets[h_a] = frozenset(an.children)
            for z, child in an.children.items():
                pt.children[z] = walk(child, h_a.observe(z))
            return pt

        return walk(self.root, History()), subsets


def udb_full_belief_plan(model, b0, cfg: SolverConfig, trace=None) -> PlanResult:
    search = UdbSearch(model, b0, cfg.bound_cfg)
    A = model.num_actions
    start, more = _budget(cfg)
    pruned: set[int] = set()
    it = 0
    while more(it):
        if not search.step(set(range(A)) - pruned):
            break
        it += 1
        intervals = search.root_intervals()
        pruned |= prune_decision(intervals)
        if trace is not None:
            trace(it, 0, 1.0, search.root.upper, search.root.lower)
        if cfg.stop_on_certified and len(pruned) == A - 1:
            break
        if search.root.upper - search.root.lower <= cfg.width_tol:
            break
    intervals = search.root_intervals()
    pruned |= prune_decision(intervals)
    chosen = best_lower_action(intervals, pruned)
    wall = (time.perf_counter() - start) * 1000.0
    root_iv = BoundInterval(search.root.lower, search.root.upper)
    return PlanResult(chosen, root_iv, len(pruned) == A - 1, it, wall, intervals, pruned, search)


def exact_plan(model, b0, cfg: SolverConfig, trace=None) -> PlanResult:
    start = time.perf_counter()
    qs = exact_q_values(model, b0)
    v = max(qs)
    a = qs.index(v)
    intervals = {i: BoundInterval(q, q) for i, q in enumerate(qs)}
    pruned = prune_decision(intervals)
    wall = (time.perf_counter() - start) * 1000.0
    return PlanResult(a, BoundInterval(v, v), len(pruned) == model.num_actions - 1, 0, wall, intervals, pruned)


PLANNERS = {
    "pomcp": pomcp_plan,
    "db-pomcp": db_pomcp_plan,
    "rb-pomcp": rb_pomcp_plan,
    "udb-full": udb_full_belief_plan,
    "exact": exact_plan,
}


def plan(model: TabularPomdp, b0: Belief, cfg: SolverConfig, trace: TraceHook | None = None) -> PlanResult:
    return PLANNERS[cfg.solver_kind](model, b0, cfg, trace)


# -- certification -----------------------------------------------------------------


@dataclass
class CertificationReport:
    v_star: float
    lower: float
    upper: float
    lower_margin: float
    upper_margin: float
    certified: bool
    chosen_action: int
    chosen_value: float | None
    optimal_action: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def certify(
    result: PlanResult,
    v_star: float,
    a_star: int,
    q_star: list[float] | None = None,
    tol: float = 1e-9,
) -> CertificationReport:
    """Check a plan result against oracle values; raise CertificationFailure on any breach."""
    iv = result.root_interval
    chosen_q = q_star[result.chosen_action] if q_star is not None else None
    report = CertificationReport(
        v_star, iv.lower, iv.upper, v_star - iv.lower, iv.upper - v_star,
        result.certified_optimal, result.chosen_action, chosen_q, a_star,
    )
    problems = []
    if report.lower_margin < -tol:
        problems.append(f"lower bound {iv.lower!r} exceeds V*={v_star!r}")
    if report.upper_margin < -tol:
        problems.append(f"upper bound {iv.upper!r} is below V*={v_star!r}")
    for a, a_iv in result.intervals.items():
        if q_star is not None and not a_iv.contains(q_star[a], tol):
            problems.append(f"action {a}: interval [{a_iv.lower!r}, {a_iv.upper!r}] misses Q*={q_star[a]!r}")
    if result.certified_optimal:
        if chosen_q is not None:
            if abs(chosen_q - v_star) > max(tol, 1e-6):
                problems.append(f"certified action {result.chosen_action} has Q*={chosen_q!r} != V*={v_star!r}")
        elif result.chosen_action != a_star:
            problems.append(f"certified action {result.chosen_action} differs from oracle action {a_star}")
    if problems:
        trace = "\n".join(f"  {a}: [{v.lower!r}, {v.upper!r}]{' pruned' if a in result.pruned else ''}"
                          for a, v in sorted(result.intervals.items()))
        raise CertificationFailure("; ".join(problems) + "\nroot intervals:\n" + trace)
    return report


def certify_against_oracle(model: TabularPomdp, b0: Belief, result: PlanResult, tol: float = 1e-9):
    v, a, _ = exact_optimal_value(model, b0)
    return certify(result, v, a, exact_q_values(model, b0), tol)
