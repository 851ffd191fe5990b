"""Search tree with trajectory bookkeeping and incremental root bounds.

Every history node keeps the summed weight of the distinct trajectories that
reached it; every action node additionally accumulates their weighted
immediate reward.  Trajectories are recognized by 64-bit fingerprints so a
revisit never double counts.  ``bwd_update`` turns these masses into upper and
lower bounds that are valid at the root only.
"""

from __future__ import annotations

from pathlib import Path
from typing import TextIO

from .bounds import BoundConfig, BoundInterval
from .core import Belief, TabularPomdp, Trajectory, extend_trajectory_id, root_trajectory_id


class ActionNode:
    __slots__ = (
        "action", "rbar", "mass", "ids", "children", "child_mass", "child_u", "child_l",
        "upper", "lower", "visits", "qmean", "pruned",
    )

    def __init__(self, action: int):
        self.action = action
        self.rbar = 0.0
        self.mass = 0.0
        self.ids: set[int] = set()
        self.children: dict[int, HistoryNode] = {}
        self.child_mass = 0.0
        self.child_u = 0.0
        self.child_l = 0.0
        self.upper = 0.0
        self.lower = 0.0
        self.visits = 0
        self.qmean = 0.0
        self.pruned = False

    @property
    def bounds(self) -> BoundInterval:
        return BoundInterval(self.lower, self.upper)


class HistoryNode:
    __slots__ = ("t", "depth", "mass", "ids", "children", "upper", "lower", "visits")

    def __init__(self, t: int, depth: int, num_actions: int):
        self.t = t
        self.depth = depth
        self.mass = 0.0
        self.ids: set[int] = set()
        self.children = {a: ActionNode(a) for a in range(num_actions)}
        self.upper = 0.0
        self.lower = 0.0
        self.visits = 0

    @property
    def bounds(self) -> BoundInterval:
        return BoundInterval(self.lower, self.upper)


class BeliefTree:
    """Search tree rooted at ``belief`` (time ``belief.t``)."""

    def __init__(self, model: TabularPomdp, belief: Belief, cfg: BoundConfig | None = None):
        self.model = model
        self.belief = belief
        self.cfg = cfg or BoundConfig.default(model)
        self.vmax, self.vmin = self.cfg.table()
        self.gamma = self.cfg.discount
        self.num_nodes = 0
        self.root = self.new_node(belief.t, 0)

    def new_node(self, t: int, depth: int) -> HistoryNode:
        self.num_nodes += 1
        return HistoryNode(t, depth, self.model.num_actions)

    def child(self, ha: ActionNode, z: int, parent: HistoryNode) -> HistoryNode:
        node = ha.children.get(z)
        if node is None:
            node = ha.children[z] = self.new_node(parent.t + 1, parent.depth + 1)
        return node

    # -- forward bookkeeping ------------------------------------------------

    def add_root_state(self, x0: int) -> Trajectory:
        tau = Trajectory.start(self.belief, x0)
        if tau.id not in self.root.ids:
            self.root.ids.add(tau.id)
            self.root.mass += tau.weight
        return tau

    def record_action(self, h: HistoryNode, ha: ActionNode, tid: int, weight: float, x: int) -> None:
        if tid not in ha.ids:
            ha.ids.add(tid)
            ha.mass += weight
            ha.rbar += weight * self.model.rewards[x][ha.action]

    def record_child(self, ha: ActionNode, haz: HistoryNode, tid: int, weight: float) -> None:
        if tid not in haz.ids:
            haz.ids.add(tid)
            haz.mass += weight
            ha.child_mass += weight

    def fwd_update(
        self, h: HistoryNode, ha: ActionNode, haz: HistoryNode | None, tau: Trajectory, x_next: int, z: int
    ) -> Trajectory:
        """Record ``tau`` at ``ha``, extend it by (a, z, x_next) and record it at ``haz``.

        ``haz`` is None at the last step, where only the reward is recorded.
        """
        self.record_action(h, ha, tau.id, tau.weight, tau.last_state)
        if haz is None:
            return tau
        m = self.model
        a = ha.action
        w = tau.weight * m.obs_lik[x_next][z] * m.trans_lik[tau.last_state][a][x_next]
        ext = Trajectory(
            tau.states + (x_next,),
            tau.history.act(a).observe(z),
            w,
            extend_trajectory_id(tau.id, a, z, x_next),
        )
        self.record_child(ha, haz, ext.id, w)
        return ext

    # -- backward bounds ----------------------------------------------------

    def bwd_update(self, h: HistoryNode, ha: ActionNode | None = None) -> None:
        """Refresh ``ha``'s child sums, then every action bound at ``h`` and h itself.

        All actions are refreshed because a new trajectory at ``h`` widens the
        mass gap of each of them.
        """
        if ha is not None:
            cu = cl = 0.0
            for c in ha.children.values():
                cu += c.upper
                cl += c.lower
            ha.child_u, ha.child_l = cu, cl
        t = h.t
        vmax_t, vmin_t = self.vmax[t], self.vmin[t]
        vmax_n, vmin_n = self.vmax[t + 1], self.vmin[t + 1]
        g = self.gamma
        hm = h.mass
        best_u = best_l = None
        for node in h.children.values():
            m = node.mass
            head = hm - m
            tail = m - node.child_mass
            u = node.rbar + vmax_t * head + g * (vmax_n * tail + node.child_u)
            l = node.rbar + vmin_t * head + g * (vmin_n * tail + node.child_l)
            node.upper, node.lower = u, l
            if best_u is None or u > best_u:
                best_u = u
            if best_l is None or l > best_l:
                best_l = l
        h.upper, h.lower = best_u, best_l

    def refresh(self) -> None:
        """Recompute every bound bottom-up (used after bulk insertion)."""

        def visit(h):
            for ha in h.children.values():
                for c in ha.children.values():
                    visit(c)
                cu = cl = cm = 0.0
                for c in ha.children.values():
                    cu += c.upper
                    cl += c.lower
                    cm += c.mass
                ha.child_u, ha.child_l, ha.child_mass = cu, cl, cm
            self.bwd_update(h)

        visit(self.root)

    def insert(self, tau: Trajectory, final_action: int | None = None) -> None:
        """Push every prefix of ``tau`` into the tree.

        ``final_action`` additionally records the last state's reward under
        that action.  Bounds along the path are refreshed.
        """
        m = self.model
        x = tau.states[0]
        tid = root_trajectory_id(x)
        w = self.belief.probs.get(x, 0.0)
        h = self.root
        if tid not in h.ids:
            h.ids.add(tid)
            h.mass += w
        path = []
        acts, obs = tau.history.actions, tau.history.observations
        for k, (a, z) in enumerate(zip(acts, obs)):
            ha = h.children[a]
            self.record_action(h, ha, tid, w, x)
            y = tau.states[k + 1]
            w = w * m.obs_lik[y][z] * m.trans_lik[x][a][y]
            tid = extend_trajectory_id(tid, a, z, y)
            haz = self.child(ha, z, h)
            self.record_child(ha, haz, tid, w)
            path.append((h, ha))
            h, x = haz, y
        if final_action is not None:
            ha = h.children[final_action]
            self.record_action(h, ha, tid, w, x)
            path.append((h, ha))
        else:
            path.append((h, None))
        for node, ha in reversed(path):
            self.bwd_update(node, ha)

    # -- root view ------------------------------------------------------------

    def node_intervals(self, h: HistoryNode) -> dict[int, BoundInterval]:
        """Per-action intervals at ``h``; at the root they include the unseen prior mass."""
        if h is self.root:
            return self.root_intervals()
        return {a: BoundInterval(ha.lower, ha.upper) for a, ha in sorted(h.children.items())}

    def root_intervals(self) -> dict[int, BoundInterval]:
        missing = 1.0 - self.root.mass
        t = self.root.t
        du, dl = self.vmax[t] * missing, self.vmin[t] * missing
        return {
            a: BoundInterval(ha.lower + dl, ha.upper + du) for a, ha in sorted(self.root.children.items())
        }

    def root_interval(self) -> BoundInterval:
        ivs = self.root_intervals().values()
        return BoundInterval(max(i.lower for i in ivs), max(i.upper for i in ivs))

    # -- debugging ------------------------------------------------------------

    def dump(self, out: TextIO | str | Path) -> None:
        """Depth-indented ``h|a depth mass rbar U L N pruned`` lines."""
        if not hasattr(out, "write"):
            with open(out, "w") as fh:
                self.dump(fh)
            return

        def walk(h, label):
            pad = "  " * (2 * h.depth)
            out.write(f"{pad}h:{label} {h.depth} {h.mass:.12g} - {h.upper:.12g} {h.lower:.12g} {h.visits} -\n")
            for a, ha in sorted(h.children.items()):
                if ha.visits == 0 and ha.mass == 0.0:
                    continue
                out.write(
                    f"{pad}  a:{a} {h.depth} {ha.mass:.12g} {ha.rbar:.12g} {ha.upper:.12g} "
                    f"{ha.lower:.12g} {ha.visits} {int(ha.pruned)}\n"
                )
                for z, c in sorted(ha.children.items()):
                    walk(c, f"z{z}")

        walk(self.root, "root")
