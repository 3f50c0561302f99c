"""How the worst-case reweighting moves as the divergence radius grows.

Run: python demos/divergence_balls.py
"""
# %%
import numpy as np

from hcope.divergences import chi2_quantile_1dof, chi2_weights, divergence_value, kl_weights

rng = np.random.default_rng(0)
z = rng.beta(2, 5, size=50)
print(f"sample mean of the scores: {z.mean():.4f}")

# %% [markdown]
# Each radius xi defines a ball of reweightings around the uniform weights.
# The upper (lower) value is the largest (smallest) reweighted mean in the
# ball.  The radius used for a (1 - alpha) interval is the chi-square(1)
# quantile at 1 - alpha.

# %%
for level in (0.5, 0.8, 0.9, 0.95, 0.99):
    xi = chi2_quantile_1dof(level)
    hi, lo = kl_weights(z, xi, "max").w, kl_weights(z, xi, "min").w
    chi_hi = chi2_weights(z, xi, "max").w
    print(f"level {level:.2f}  xi {xi:6.3f}  KL [{lo @ z:.4f}, {hi @ z:.4f}]  "
          f"chi2 upper {chi_hi @ z:.4f}  n*D(w_hi) {len(z) * divergence_value('modified_kl', hi):.3f}")

# %% [markdown]
# The chi-square upper value has a closed form whenever the ball does not
# touch the simplex boundary: mean + sqrt(xi * var / n).

# %%
xi = chi2_quantile_1dof(0.9)
print(f"closed form {z.mean() + np.sqrt(xi * z.var() / len(z)):.6f}  "
      f"solver {chi2_weights(z, xi).w @ z:.6f}")
