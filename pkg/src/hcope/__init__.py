"""High-confidence off-policy evaluation for tabular MDPs and bandits."""

from .coindice import (SolverConfig, coin_bandit_interval, finite_sample_constants,
                       finite_sample_correction, lagrangian_scores, point_estimate, solve_bounds,
                       solve_bounds_undiscounted)
from .divergences import DivergenceSpec, WeightVector, chi2_quantile_1dof, robust_weights
from .envs import (BanditSpec, Dataset, GridworldSpec, bandit_to_mdp, collect_dataset,
                   gridworld_policies, gridworld_to_mdp)
from .features import FeatureMap, TauTable
from .intervals import ConfidenceInterval, SolverDivergenceError
from .mdp import (TabularMdp, TabularPolicy, exact_occupancy, exact_policy_value,
                  exact_q_function, random_mdp, random_policy)

__version__ = "0.1.0"
