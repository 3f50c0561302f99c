"""Intervals for a slippery 4x4 gridworld as the confidence level changes.

Run: python demos/gridworld_intervals.py
"""
# %%
import numpy as np

from hcope import baselines
from hcope.coindice import point_estimate, solve_bounds
from hcope.envs import collect_dataset
from hcope.features import FeatureMap
from hcope.harness import build_environment

env = build_environment({"kind": "gridworld", "width": 4, "height": 4, "gamma": 0.99})
data = collect_dataset(env.mdp, env.behavior, env.target, 50, 100, seed=7)
fmap = FeatureMap(env.mdp.n_states, env.mdp.n_actions)
print(f"true target value {env.truth:.4f}, {len(data)} logged transitions")
print(f"point estimate   {point_estimate(data, fmap, 0.99, target_policy=env.target):.4f}")

# %% [markdown]
# The estimator never looks at the behavior probabilities; the baselines do.

# %%
est = baselines.stepwise_is_estimates(data, env.target, env.behavior, 0.99)
for level in (0.5, 0.7, 0.9, 0.95):
    alpha = 1 - level
    ci = solve_bounds(data, fmap, env.target, 0.99, alpha)
    t = baselines.t_interval(est, alpha)
    print(f"level {level:.2f}  coindice [{ci.lower:.4f}, {ci.upper:.4f}]  "
          f"t-test [{t.lower:.4f}, {t.upper:.4f}]")
