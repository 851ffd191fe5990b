"""Online POMDP planning with deterministic value bounds and optimality certificates."""

from .bounds import BoundConfig, BoundInterval
from .core import Belief, History, TabularPomdp, Trajectory, belief_update, load_model, save_model
from .environments import ENVIRONMENTS, make_env
from .oracle import exact_optimal_value, exact_policy_value
from .solvers import SOLVERS, PlanResult, SolverConfig, certify, plan

__all__ = [
    "BoundConfig", "BoundInterval", "Belief", "History", "TabularPomdp", "Trajectory", "belief_update",
    "load_model", "save_model", "ENVIRONMENTS", "make_env", "exact_optimal_value", "exact_policy_value",
    "SOLVERS", "PlanResult", "SolverConfig", "certify", "plan",
]

__version__ = "0.1.0"
