"""Importance-sampling baselines: per-trajectory estimates and three interval recipes.

These need the behavior policy, unlike the CoinDICE estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize, special

from .envs import Dataset
from .intervals import ConfidenceInterval
from .mdp import TabularPolicy

__all__ = ["TrajectoryEstimates", "stepwise_is_estimates", "bernstein_interval", "t_interval",
           "t_quantile", "bca_bootstrap_interval"]


@dataclass(frozen=True, eq=False)
class TrajectoryEstimates:
    """One normalized importance-sampling return per trajectory, clipped to ``[0, clip_bound]``."""

    values: np.ndarray
    clip_bound: float
    n_clipped: int = 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("trajectory estimates must be finite")
        if vals.size and (vals.min() < 0 or vals.max() > self.clip_bound):
            raise ValueError(f"trajectory estimates must lie in [0, {self.clip_bound}]")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size

    @property
    def mean(self) -> float:
        return float(self.values.mean())


def stepwise_is_estimates(dataset: Dataset, target: TabularPolicy, behavior: TabularPolicy,
                          gamma: float, clip_bound: Optional[float] = None,
                          self_normalize: bool = False) -> TrajectoryEstimates:
    """Per-trajectory ``(1 - g) / (1 - g^H) sum_t g^t (prod_{k<=t} rho_k) r_t``.

    ``rho_k = pi(a_k|s_k) / pi_b(a_k|s_k)``.  With ``self_normalize`` each
    cumulative ratio is divided by its mean across trajectories at the same
    step (weighted per-decision form).  Values are clipped to
    ``[0, clip_bound]``; the number of clipped trajectories is kept on the
    result.  The default bound is the largest value the estimator can reach,
    ``r_max * max(rho)^H`` (``r_max`` when the policies agree), so nothing is
    clipped and Bernstein still sees a valid range.  Clipping at ``r_max``
    instead would bias every ratio above one downward.  For ``gamma == 1`` the prefactor is
    ``1 / H``.
    """
    pb = behavior.probs[dataset.s, dataset.a]
    if np.any(pb <= 0):
        raise ValueError("behavior policy gives zero probability to a logged action")
    ratio = target.probs[dataset.s, dataset.a] / pb
    traj = dataset.traj_id
    order = np.argsort(traj, kind="stable")
    traj, ratio, r = traj[order], ratio[order], dataset.r[order]
    ids, start, length = np.unique(traj, return_index=True, return_counts=True)
    step = np.arange(traj.size) - np.repeat(start, length)
    cum = np.concatenate([np.cumprod(chunk) for chunk in np.split(ratio, start[1:])])
    if self_normalize:
        step_mean = np.bincount(step, weights=cum) / np.bincount(step)
        with np.errstate(invalid="ignore", divide="ignore"):
            cum = np.where(step_mean[step] > 0, cum / step_mean[step], 0.0)
    disc = gamma ** step * cum * r
    totals = np.bincount(np.repeat(np.arange(ids.size), length), weights=disc)
    if gamma < 1:
        norm = (1.0 - gamma) / (1.0 - gamma ** length)
    else:
        norm = 1.0 / length
    values = totals * norm
    if clip_bound is None:
        behaved = behavior.probs > 0
        rho_max = max(1.0, float(np.max(target.probs[behaved] / behavior.probs[behaved])))
        if self_normalize:
            # A normalized ratio is at most the number of trajectories.
            bound = float(dataset.r_max * ids.size)
        else:
            bound = float(dataset.r_max * min(rho_max ** length.max(), 1e300))
    else:
        bound = float(clip_bound)
    n_clipped = int(np.count_nonzero((values > bound) | (values < 0)))
    return TrajectoryEstimates(np.clip(values, 0.0, bound), bound, n_clipped)


def _values(estimates) -> np.ndarray:
    vals = np.asarray(getattr(estimates, "values", estimates), dtype=float)
    if vals.size < 2:
        raise ValueError("need at least two trajectory estimates")
    return vals


def bernstein_interval(estimates, alpha: float, range_bound: Optional[float] = None
                       ) -> ConfidenceInterval:
    """Two-sided empirical Bernstein interval (Maurer-Pontil form, ``alpha / 2`` per side).

    ``mean +- (sqrt(2 s^2 ln(3/a) / n) + 3 M ln(3/a) / n)`` with ``a = alpha / 2``
    and ``s^2`` the unbiased sample variance.
    """
    vals = _values(estimates)
    if range_bound is None:
        range_bound = getattr(estimates, "clip_bound", None)
        if range_bound is None:
            raise ValueError("range_bound is required for raw arrays")
    if vals.min() < 0 or vals.max() > range_bound:
        raise ValueError(f"estimates must lie in [0, {range_bound}]")
    n = vals.size
    mean, var = vals.mean(), vals.var(ddof=1)
    log_term = math.log(3.0 / (alpha / 2.0))
    half = math.sqrt(2.0 * var * log_term / n) + 3.0 * range_bound * log_term / n
    return ConfidenceInterval(mean - half, mean + half, mean, alpha, "bernstein",
                              {"n": n, "variance": var, "range_bound": range_bound})


def _t_cdf(t: float, dof: float) -> float:
    tail = 0.5 * special.betainc(dof / 2.0, 0.5, dof / (dof + t * t))
    return 1.0 - tail if t >= 0 else tail


def t_quantile(p: float, dof: float) -> float:
    """Student-t quantile by bracketing the incomplete-beta CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, dof)
    hi = 1.0
    while _t_cdf(hi, dof) < p:
        hi *= 2.0
    return optimize.brentq(lambda t: _t_cdf(t, dof) - p, 0.0, hi, xtol=1e-12, rtol=1e-14)


def t_interval(estimates, alpha: float) -> ConfidenceInterval:
    """``mean +- t_{n-1, 1-alpha/2} s / sqrt(n)``."""
    vals = _values(estimates)
    n = vals.size
    mean, sd = vals.mean(), vals.std(ddof=1)
    q = t_quantile(1.0 - alpha / 2.0, n - 1)
    half = q * sd / math.sqrt(n)
    return ConfidenceInterval(mean - half, mean + half, mean, alpha, "t_test",
                              {"n": n, "t_quantile": q})


def bca_bootstrap_interval(estimates, alpha: float, n_boot: int = 2000, seed: int = 0
                           ) -> ConfidenceInterval:
    """Bias-corrected and accelerated bootstrap interval for the mean."""
    vals = _values(estimates)
    if n_boot < 1:
        raise ValueError("n_boot must be positive")
    n = vals.size
    mean = float(vals.mean())
    if np.all(vals == vals[0]):
        return ConfidenceInterval(mean, mean, mean, alpha, "bootstrap", {"n": n, "degenerate": True})
    rng = np.random.default_rng(seed)
    boot = np.empty(n_boot)
    chunk = max(1, 2_000_000 // n)
    for lo in range(0, n_boot, chunk):
        idx = rng.integers(0, n, size=(min(chunk, n_boot - lo), n))
        boot[lo:lo + idx.shape[0]] = vals[idx].mean(axis=1)
    frac = np.clip(np.mean(boot < mean), 1.0 / (n_boot + 1), n_boot / (n_boot + 1))
    z0 = special.ndtri(frac)
    jack = (vals.sum() - vals) / (n - 1)
    d = jack.mean() - jack
    denom = 6.0 * np.sum(d * d) ** 1.5
    accel = float(np.sum(d ** 3) / denom) if denom > 0 else 0.0
    levels = []
    for z_alpha in (special.ndtri(alpha / 2.0), special.ndtri(1.0 - alpha / 2.0)):
        shift = z0 + z_alpha
        levels.append(special.ndtr(z0 + shift / (1.0 - accel * shift)))
    lower, upper = np.quantile(boot, levels)
    # Resampling noise can push an endpoint past the mean on tiny samples.
    lower, upper = min(lower, mean), max(upper, mean)
    return ConfidenceInterval(float(lower), float(upper), mean, alpha, "bootstrap",
                              {"n": n, "z0": float(z0), "acceleration": accel, "n_boot": n_boot})
