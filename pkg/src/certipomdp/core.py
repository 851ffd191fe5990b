"""Discrete POMDP model, beliefs, histories and weighted trajectories."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

MODEL_TOL = 1e-12
NORM_TOL = 1e-9

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
ROOT_ID = 0x6A09E667F3BCC908


class ZeroLikelihood(ValueError):
    """The observation has zero probability under the propagated belief."""


class ModelError(ValueError):
    """Raised when a model file or table is malformed."""


def mix64(h):
    """splitmix64 finalizer.

    Works on python ints and on numpy uint64 arrays alike (numpy wraps on
    overflow, the mask handles python ints).
    """
    h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    h = (h ^ (h >> 27)) * 0x94D049BB133111EB & MASK64
    return h ^ (h >> 31)


def root_trajectory_id(state):
    return mix64((ROOT_ID + (state + 1) * _GOLDEN) & MASK64)


def extend_trajectory_id(parent, action, obs, state):
    """Fingerprint of a trajectory after appending (action, obs, state)."""
    h = mix64((parent ^ ((action + 1) * _GOLDEN & MASK64)) & MASK64)
    h = mix64((h ^ ((obs + 1) * 0xD6E8FEB86659FD93 & MASK64)) & MASK64)
    return mix64((h ^ ((state + 1) * 0xA0761D6478BD642F & MASK64)) & MASK64)


@dataclass(frozen=True, eq=False)
class TabularPomdp:
    """Finite-horizon POMDP stored as explicit probability tables.

    ``transition[x, a, x']`` is P(x'|x, a), ``observation[x, z]`` is P(z|x)
    for the state the observation is emitted from, ``reward[x, a]`` is the
    state reward and ``prior`` is b0.  ``last_step`` is the last time step T:
    an episode takes ``last_step + 1`` actions, at t = 0..T.
    """

    transition: np.ndarray
    observation: np.ndarray
    reward: np.ndarray
    prior: np.ndarray
    last_step: int
    r_max: float | None = None
    discount: float = 1.0
    state_names: tuple[str, ...] | None = None
    action_names: tuple[str, ...] | None = None
    obs_names: tuple[str, ...] | None = None

    def __post_init__(self):
        for name in ("transition", "observation", "reward", "prior"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.transition.ndim != 3 or self.observation.ndim != 2:
            raise ModelError("transition must be SxAxS and observation SxZ")
        s, a, s2 = self.transition.shape
        if s != s2 or self.observation.shape[0] != s or self.reward.shape != (s, a):
            raise ModelError("inconsistent table shapes")
        if self.prior.shape != (s,):
            raise ModelError("prior must have one entry per state")
        if self.last_step < 0:
            raise ModelError("last_step must be non-negative")
        if self.r_max is None:
            object.__setattr__(self, "r_max", float(np.max(np.abs(self.reward), initial=0.0)))
        if not 0.0 < self.discount <= 1.0:
            raise ModelError("discount must lie in (0, 1]")

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_obs(self) -> int:
        return self.observation.shape[1]

    @property
    def num_steps(self) -> int:
        return self.last_step + 1

    def with_last_step(self, last_step: int) -> "TabularPomdp":
        return TabularPomdp(
            self.transition, self.observation, self.reward, self.prior, last_step,
            self.r_max, self.discount, self.state_names, self.action_names, self.obs_names,
        )

    # Sparse python-side views used by the samplers and the search trees.

    @cached_property
    def succ(self) -> list[list[list[tuple[int, float]]]]:
        """succ[x][a] -> [(x', P(x'|x,a))] over positive entries."""
        return [
            [[(int(y), float(p)) for y, p in enumerate(self.transition[x, a]) if p > 0.0]
             for a in range(self.num_actions)]
            for x in range(self.num_states)
        ]

    @cached_property
    def obs_lik(self) -> list[list[float]]:
        return self.observation.tolist()

    @cached_property
    def trans_lik(self) -> list[list[list[float]]]:
        return self.transition.tolist()

    @cached_property
    def rewards(self) -> list[list[float]]:
        return self.reward.tolist()

    @cached_property
    def _succ_cdf(self) -> list[list[tuple[list[int], list[float]]]]:
        return [[_cdf(row) for row in per_a] for per_a in self.succ]

    @cached_property
    def _obs_cdf(self) -> list[tuple[list[int], list[float]]]:
        return [
            _cdf([(z, p) for z, p in enumerate(row) if p > 0.0]) for row in self.obs_lik
        ]

    @cached_property
    def _prior_cdf(self) -> tuple[list[int], list[float]]:
        return _cdf([(x, float(p)) for x, p in enumerate(self.prior) if p > 0.0])

    def sample_next_state(self, x: int, a: int, rng) -> int:
        items, cdf = self._succ_cdf[x][a]
        return items[_pick(cdf, rng.random())]

    def sample_obs(self, x: int, rng) -> int:
        items, cdf = self._obs_cdf[x]
        return items[_pick(cdf, rng.random())]

    def sample_prior(self, rng) -> int:
        items, cdf = self._prior_cdf
        return items[_pick(cdf, rng.random())]


def _cdf(pairs):
    items, acc, total = [], [], 0.0
    for item, p in pairs:
        total += p
        items.append(item)
        acc.append(total)
    return items, [c / total for c in acc]


def _pick(cdf, u):
    i = bisect.bisect_right(cdf, u)
    return min(i, len(cdf) - 1)


def sample_categorical(probs: Mapping[int, float], rng) -> int:
    """Draw a key of ``probs`` in ascending key order."""
    u = rng.random() * sum(probs.values())
    acc = 0.0
    last = None
    for k in sorted(probs):
        acc += probs[k]
        last = k
        if u < acc:
            return k
    return last


def validate_model(model: TabularPomdp) -> list[str]:
    """Return one message per violated table invariant (empty when valid)."""
    problems = []
    T, O, R, b0 = model.transition, model.observation, model.reward, model.prior
    for x in range(model.num_states):
        for a in range(model.num_actions):
            row = T[x, a]
            if np.any(row < 0):
                problems.append(f"transition row (x={x}, a={a}) has a negative entry")
            if abs(row.sum() - 1.0) > MODEL_TOL:
                problems.append(f"transition row (x={x}, a={a}) sums to {row.sum()!r}")
        row = O[x]
        if np.any(row < 0):
            problems.append(f"observation row x={x} has a negative entry")
        if abs(row.sum() - 1.0) > MODEL_TOL:
            problems.append(f"observation row x={x} sums to {row.sum()!r}")
        if b0[x] < 0:
            problems.append(f"prior entry x={x} is negative ({b0[x]!r})")
    if abs(b0.sum() - 1.0) > MODEL_TOL:
        problems.append(f"prior sums to {b0.sum()!r}")
    bad = np.argwhere(np.abs(R) > model.r_max)
    for x, a in bad:
        problems.append(f"reward (x={x}, a={a}) = {R[x, a]!r} exceeds r_max={model.r_max!r}")
    if not np.all(np.isfinite(R)):
        problems.append("reward table has non-finite entries")
    return problems


@dataclass(frozen=True)
class Belief:
    """Normalized sparse distribution over states at time ``t``."""

    probs: Mapping[int, float]
    t: int = 0

    def __post_init__(self):
        clean = {int(x): float(p) for x, p in sorted(self.probs.items()) if p > 0.0}
        object.__setattr__(self, "probs", clean)

    @classmethod
    def from_vector(cls, vec: Sequence[float], t: int = 0) -> "Belief":
        return cls({x: float(p) for x, p in enumerate(vec) if p > 0.0}, t)

    @classmethod
    def prior(cls, model: TabularPomdp) -> "Belief":
        return cls.from_vector(model.prior, 0)

    def dense(self, num_states: int) -> np.ndarray:
        out = np.zeros(num_states)
        for x, p in self.probs.items():
            out[x] = p
        return out

    def total(self) -> float:
        return sum(self.probs.values())

    def is_normalized(self) -> bool:
        return abs(self.total() - 1.0) <= NORM_TOL

    def __hash__(self):
        return hash((tuple(self.probs.items()), self.t))


def propagate(model: TabularPomdp, b: Belief, a: int) -> dict[int, float]:
    """Predicted (pre-observation) distribution sum_x P(x'|x,a) b(x)."""
    out: dict[int, float] = {}
    succ = model.succ
    for x, p in b.probs.items():
        for y, q in succ[x][a]:
            out[y] = out.get(y, 0.0) + p * q
    return out


def observation_marginals(model: TabularPomdp, b: Belief, a: int) -> list[float]:
    """P(z | H^-) for every observation after taking ``a`` in ``b``."""
    pred = propagate(model, b, a)
    lik = model.obs_lik
    out = [0.0] * model.num_obs
    for y, p in pred.items():
        row = lik[y]
        for z in range(model.num_obs):
            out[z] += p * row[z]
    return out


def belief_update(model: TabularPomdp, b: Belief, a: int, z: int) -> tuple[Belief, float]:
    """Bayes update; returns the posterior and the normalizer P(z | H^-).

    Raises ZeroLikelihood when ``z`` cannot be observed after ``a``.
    """
    if b.t >= model.last_step:
        raise ValueError(f"belief at t={b.t} is already at the last step")
    pred = propagate(model, b, a)
    lik = model.obs_lik
    post = {y: p * lik[y][z] for y, p in pred.items()}
    marginal = sum(post.values())
    if marginal <= 0.0:
        raise ZeroLikelihood(f"observation {z} impossible after action {a}")
    return Belief({y: p / marginal for y, p in post.items() if p > 0.0}, b.t + 1), marginal


def belief_reward(model: TabularPomdp, b: Belief, a: int) -> float:
    rw = model.rewards
    return sum(p * rw[x][a] for x, p in b.probs.items())


@dataclass(frozen=True)
class History:
    """Action/observation history; one more action than observations when propagated."""

    actions: tuple[int, ...] = ()
    observations: tuple[int, ...] = ()

    def __post_init__(self):
        n, m = len(self.actions), len(self.observations)
        if n not in (m, m + 1):
            raise ValueError("a history holds as many actions as observations, or one more")

    @property
    def is_propagated(self) -> bool:
        return len(self.actions) == len(self.observations) + 1

    def act(self, a: int) -> "History":
        if self.is_propagated:
            raise ValueError("history already ends with an action")
        return History(self.actions + (a,), self.observations)

    def observe(self, z: int) -> "History":
        if not self.is_propagated:
            raise ValueError("history must end with an action before observing")
        return History(self.actions, self.observations + (z,))


@dataclass(frozen=True)
class Trajectory:
    """State path x_0..x_t with its history and unnormalized weight."""

    states: tuple[int, ...]
    history: History = field(default_factory=History)
    weight: float = 1.0
    id: int = 0

    @classmethod
    def start(cls, b: Belief | TabularPomdp, x0: int) -> "Trajectory":
        weight = b.probs.get(x0, 0.0) if isinstance(b, Belief) else float(b.prior[x0])
        return cls((x0,), History(), weight, root_trajectory_id(x0))

    @property
    def t(self) -> int:
        return len(self.states) - 1

    @property
    def last_state(self) -> int:
        return self.states[-1]


def trajectory_extend(
    model: TabularPomdp, tau: Trajectory, a: int, z: int, x_next: int
) -> Trajectory:
    w = tau.weight * model.obs_lik[x_next][z] * model.trans_lik[tau.states[-1]][a][x_next]
    return Trajectory(
        tau.states + (x_next,),
        History(tau.history.actions + (a,), tau.history.observations + (z,)),
        w,
        extend_trajectory_id(tau.id, a, z, x_next),
    )


def trajectory_weight(model: TabularPomdp, tau: Trajectory, b0: Belief | None = None) -> float:
    """Recompute P(tau) from scratch (prior times every O and T factor)."""
    x0 = tau.states[0]
    w = b0.probs.get(x0, 0.0) if b0 is not None else float(model.prior[x0])
    for k, (a, z) in enumerate(zip(tau.history.actions, tau.history.observations)):
        x, y = tau.states[k], tau.states[k + 1]
        w *= float(model.transition[x, a, y]) * float(model.observation[y, z])
    return w


# -- text model format ------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps_model(model: TabularPomdp) -> str:
    S, A, Z = model.num_states, model.num_actions, model.num_obs
    lines = [f"pomdp v1 {S} {A} {Z} {model.last_step} {_fmt(model.r_max)} {_fmt(model.discount)}"]
    lines.append("prior")
    lines.append(" ".join(_fmt(p) for p in model.prior))
    for a in range(A):
        lines.append(f"T {a}")
        for x in range(S):
            lines.append(" ".join(_fmt(p) for p in model.transition[x, a]))
    lines.append("O")
    for x in range(S):
        lines.append(" ".join(_fmt(p) for p in model.observation[x]))
    lines.append("R")
    for x in range(S):
        lines.append(" ".join(_fmt(r) for r in model.reward[x]))
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> TabularPomdp:
    rows = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows or rows[0][:2] != ["pomdp", "v1"] or len(rows[0]) != 8:
        raise ModelError("expected header 'pomdp v1 S A Z T RMAX DISCOUNT'")
    S, A, Z, T = (int(v) for v in rows[0][2:6])
    r_max, discount = float(rows[0][6]), float(rows[0][7])
    pos = 1

    def block(tag, nrows, ncols):
        nonlocal pos
        if pos >= len(rows) or rows[pos] != tag:
            raise ModelError(f"expected block {' '.join(tag)!r} at row {pos}")
        pos += 1
        out = []
        for _ in range(nrows):
            if pos >= len(rows) or len(rows[pos]) != ncols:
                raise ModelError(f"block {' '.join(tag)!r}: expected {ncols} values per row")
            out.append([float(v) for v in rows[pos]])
            pos += 1
        return out

    prior = block(["prior"], 1, S)[0]
    trans = np.zeros((S, A, S))
    for a in range(A):
        trans[:, a, :] = block(["T", str(a)], S, S)
    obs = block(["O"], S, Z)
    rew = block(["R"], S, A)
    if pos != len(rows):
        raise ModelError("trailing content after R block")
    return TabularPomdp(trans, obs, rew, prior, T, r_max, discount)


def save_model(model: TabularPomdp, path: str | Path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path: str | Path) -> TabularPomdp:
    return loads_model(Path(path).read_text())
