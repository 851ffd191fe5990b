"""Benchmark POMDPs with fixed default constants.

Horizons here count decision steps: ``horizon=5`` builds a model whose
last time step is 4.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import TabularPomdp


class ParamError(ValueError):
    pass


@dataclass(frozen=True)
class TigerParams:
    listen_accuracy: float = 0.85
    r_listen: float = -1.0
    r_tiger: float = -100.0
    r_treasure: float = 10.0
    horizon: int = 5


@dataclass(frozen=True)
class BabyParams:
    p_cry_hunger: float = 0.8
    p_cry_discomfort: float = 0.9
    p_cry_no_need: float = 0.1
    p_new_hunger: float = 0.1
    p_new_discomfort: float = 0.1
    r_correct: float = 0.0
    r_wrong: float = -5.0
    horizon: int = 5


@dataclass(frozen=True)
class LightDarkParams:
    grid_len: int = 7
    light_cell: int = 5
    goal_cell: int = 0
    dark_obs_noise: float = 0.4
    r_step: float = -1.0
    r_goal: float = 10.0
    horizon: int = 5
    start_cells: tuple[int, ...] = (2, 3, 4)


@dataclass(frozen=True)
class RockSampleParams:
    grid_n: int = 3
    num_rocks: int = 2
    sensor_efficiency: float = 1.0
    r_good: float = 10.0
    r_bad: float = -10.0
    r_exit: float = 10.0
    horizon: int = 5
    rock_cells: tuple[tuple[int, int], ...] | None = None


def _check_horizon(h):
    if h < 1:
        raise ParamError("horizon must be at least 1")


# Tiger ---------------------------------------------------------------------

TIGER_LEFT, TIGER_RIGHT = 0, 1
OPEN_LEFT, OPEN_RIGHT, LISTEN = 0, 1, 2
HEAR_LEFT, HEAR_RIGHT = 0, 1


def build_tiger(p: TigerParams = TigerParams()) -> TabularPomdp:
    """Two doors, one tiger.  Opening a door resets the tiger uniformly."""
    if not 0.5 < p.listen_accuracy <= 1.0:
        raise ParamError("listen_accuracy must lie in (0.5, 1]")
    _check_horizon(p.horizon)
    T = np.zeros((2, 3, 2))
    T[:, OPEN_LEFT, :] = 0.5
    T[:, OPEN_RIGHT, :] = 0.5
    T[:, LISTEN, :] = np.eye(2)
    acc = p.listen_accuracy
    O = np.array([[acc, 1 - acc], [1 - acc, acc]])
    R = np.array([
        [p.r_tiger, p.r_treasure, p.r_listen],
        [p.r_treasure, p.r_tiger, p.r_listen],
    ])
    return TabularPomdp(
        T, O, R, np.array([0.5, 0.5]), p.horizon - 1,
        state_names=("tiger-left", "tiger-right"),
        action_names=("open-left", "open-right", "listen"),
        obs_names=("hear-left", "hear-right"),
    )


# Baby ----------------------------------------------------------------------

HUNGER, DISCOMFORT, NO_NEED = 0, 1, 2
FEED, CHANGE, NOTHING = 0, 1, 2
CRY, QUIET = 0, 1


def build_baby(p: BabyParams = BabyParams()) -> TabularPomdp:
    """Caregiver guesses the need behind the crying.

    The correct action (feed a hungry baby, change a discomforted one, do
    nothing for no need) earns ``r_correct`` and redraws the need from
    (p_new_hunger, p_new_discomfort, rest no-need); any other action earns
    ``r_wrong`` and leaves the need in place.
    """
    probs = (p.p_cry_hunger, p.p_cry_discomfort, p.p_cry_no_need,
             p.p_new_hunger, p.p_new_discomfort)
    if any(not 0.0 <= q <= 1.0 for q in probs) or p.p_new_hunger + p.p_new_discomfort > 1.0:
        raise ParamError("Baby probabilities must lie in [0, 1]")
    _check_horizon(p.horizon)
    fresh = np.array([p.p_new_hunger, p.p_new_discomfort, 1.0 - p.p_new_hunger - p.p_new_discomfort])
    T = np.zeros((3, 3, 3))
    R = np.full((3, 3), p.r_wrong)
    for need, correct in ((HUNGER, FEED), (DISCOMFORT, CHANGE), (NO_NEED, NOTHING)):
        for a in range(3):
            if a == correct:
                T[need, a] = fresh
                R[need, a] = p.r_correct
            else:
                T[need, a, need] = 1.0
    cry = np.array([p.p_cry_hunger, p.p_cry_discomfort, p.p_cry_no_need])
    O = np.stack([cry, 1.0 - cry], axis=1)
    return TabularPomdp(
        T, O, R, np.full(3, 1.0 / 3.0), p.horizon - 1,
        state_names=("hunger", "discomfort", "no-need"),
        action_names=("feed", "change", "nothing"),
        obs_names=("cry", "quiet"),
    )


# Light Dark ----------------------------------------------------------------

MOVE_LEFT, MOVE_RIGHT, STAY = 0, 1, 2


def build_light_dark(p: LightDarkParams = LightDarkParams()) -> TabularPomdp:
    """1D corridor; the light cell localizes exactly, dark cells are noisy.

    State and observation are both a cell index.  In a dark cell the true
    cell is reported with probability ``1 - dark_obs_noise`` and the noise
    mass is spread evenly over the other cells.  Moves are deterministic
    and clamped at the walls; ``STAY`` on the goal earns ``r_goal``, every
    other state-action pair costs ``r_step``.
    """
    n = p.grid_len
    if n < 2:
        raise ParamError("grid_len must be at least 2")
    if not (0 <= p.light_cell < n and 0 <= p.goal_cell < n):
        raise ParamError("light_cell and goal_cell must lie on the grid")
    if p.light_cell == p.goal_cell:
        raise ParamError("light_cell must differ from goal_cell")
    if not 0.0 < p.dark_obs_noise < 1.0:
        raise ParamError("dark_obs_noise must lie in (0, 1)")
    if not p.start_cells or any(not 0 <= c < n for c in p.start_cells):
        raise ParamError("start_cells must be non-empty cells of the grid")
    _check_horizon(p.horizon)
    T = np.zeros((n, 3, n))
    for x in range(n):
        T[x, MOVE_LEFT, max(x - 1, 0)] = 1.0
        T[x, MOVE_RIGHT, min(x + 1, n - 1)] = 1.0
        T[x, STAY, x] = 1.0
    O = np.zeros((n, n))
    for x in range(n):
        if x == p.light_cell:
            O[x, x] = 1.0
        else:
            O[x, :] = p.dark_obs_noise / (n - 1)
            O[x, x] = 1.0 - p.dark_obs_noise
    R = np.full((n, 3), p.r_step)
    R[p.goal_cell, STAY] = p.r_goal
    prior = np.zeros(n)
    prior[list(p.start_cells)] = 1.0 / len(p.start_cells)
    return TabularPomdp(
        T, O, R, prior, p.horizon - 1,
        state_names=tuple(f"cell{x}" for x in range(n)),
        action_names=("left", "right", "stay"),
        obs_names=tuple(f"see{x}" for x in range(n)),
    )


# Rock Sample ---------------------------------------------------------------


def build_rock_sample(p: RockSampleParams = RockSampleParams()) -> TabularPomdp:
    """Small Rock Sample.

    State = (row, col, rock qualities) plus one absorbing exit state (last
    index).  Actions: north, south, east, west, sample, check_0..check_{k-1}.
    Observations: none, good, bad.  A check of rock i from distance d reports
    the truth with probability (1 + eta) / 2, eta = sensor_efficiency * 2**-d.
    Moving east off the grid exits with ``r_exit``.  Because observations
    depend on the state only, the last checked rock and its reading are
    folded into the state.
    """
    n, k = p.grid_n, p.num_rocks
    if not 2 <= n <= 5:
        raise ParamError("grid_n must lie in [2, 5]")
    if not 1 <= k <= 4:
        raise ParamError("num_rocks must lie in [1, 4]")
    if not 0.0 <= p.sensor_efficiency <= 1.0:
        raise ParamError("sensor_efficiency must lie in [0, 1]")
    _check_horizon(p.horizon)
    cells = p.rock_cells
    if cells is None:
        default = [(0, n - 1), (n - 1, 0), (n // 2, n // 2), (n - 1, n - 1)]
        cells = tuple(default[:k])
    if len(cells) != k or len(set(cells)) != k:
        raise ParamError("rock_cells must list num_rocks distinct cells")
    if any(not (0 <= r < n and 0 <= c < n) for r, c in cells):
        raise ParamError("rock cells must lie on the grid")

    NONE, GOOD, BAD = 0, 1, 2
    # sensor tag: 0 = no reading, 1 = reading good, 2 = reading bad
    base = list(itertools.product(range(n), range(n), range(2 ** k), range(3)))
    index = {s: i for i, s in enumerate(base)}
    exit_state = len(base)
    S = len(base) + 1
    A = 5 + k
    T = np.zeros((S, A, S))
    R = np.zeros((S, A))
    O = np.zeros((S, 3))
    O[:, NONE] = 0.0
    for (r, c, q, tag), i in index.items():
        O[i, tag] = 1.0
    O[exit_state, NONE] = 1.0
    T[exit_state, :, exit_state] = 1.0

    def eta(r, c, rock):
        rr, cc = cells[rock]
        d = float(np.hypot(r - rr, c - cc))
        return p.sensor_efficiency * 2.0 ** (-d)

    for (r, c, q, tag), i in index.items():
        moves = {0: (r - 1, c), 1: (r + 1, c), 2: (r, c + 1), 3: (r, c - 1)}
        for a, (nr, nc) in moves.items():
            if a == 2 and nc >= n:
                T[i, a, exit_state] = 1.0
                R[i, a] = p.r_exit
                continue
            nr, nc = min(max(nr, 0), n - 1), min(max(nc, 0), n - 1)
            T[i, a, index[(nr, nc, q, 0)]] = 1.0
        # sample
        rock_here = cells.index((r, c)) if (r, c) in cells else None
        if rock_here is None:
            T[i, 4, index[(r, c, q, 0)]] = 1.0
            R[i, 4] = p.r_bad
        else:
            good = (q >> rock_here) & 1
            R[i, 4] = p.r_good if good else p.r_bad
            T[i, 4, index[(r, c, q & ~(1 << rock_here), 0)]] = 1.0
        for rock in range(k):
            e = eta(r, c, rock)
            good = (q >> rock) & 1
            p_good = (1 + e) / 2 if good else (1 - e) / 2
            T[i, 5 + rock, index[(r, c, q, 1)]] += p_good
            T[i, 5 + rock, index[(r, c, q, 2)]] += 1.0 - p_good
    prior = np.zeros(S)
    for q in range(2 ** k):
        prior[index[(0, 0, q, 0)]] = 1.0 / 2 ** k
    names = tuple(f"r{r}c{c}q{q}s{tag}" for (r, c, q, tag) in base) + ("exit",)
    return TabularPomdp(
        T, O, R, prior, p.horizon - 1,
        state_names=names,
        action_names=("north", "south", "east", "west", "sample")
        + tuple(f"check{i}" for i in range(k)),
        obs_names=("none", "good", "bad"),
    )


ENVIRONMENTS = {
    "tiger": lambda h: build_tiger(TigerParams(horizon=h)),
    "baby": lambda h: build_baby(BabyParams(horizon=h)),
    "lightdark": lambda h: build_light_dark(LightDarkParams(horizon=h)),
    "rocksample": lambda h: build_rock_sample(RockSampleParams(horizon=h)),
}

DEFAULT_HORIZONS = {"tiger": 5, "baby": 5, "lightdark": 5, "rocksample": 5}


def make_env(name: str, horizon: int | None = None) -> TabularPomdp:
    try:
        builder = ENVIRONMENTS[name]
    except KeyError:
        raise ParamError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return builder(DEFAULT_HORIZONS[name] if horizon is None else horizon)
