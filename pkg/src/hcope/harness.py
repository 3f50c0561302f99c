"""Seeded coverage experiments: many datasets per cell, one interval each, aggregated.

A cell is one ``(method, n, level)`` triple.  Each trial draws a fresh dataset
from a seed derived only from ``(master_seed, method, n, level, trial)``, so
results do not depend on how trials are spread over worker processes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines
from .coindice import SolverConfig, coin_bandit_interval, solve_bounds
from .envs import (BanditSpec, GridworldSpec, bandit_to_mdp, collect_dataset, gridworld_policies,
                   gridworld_to_mdp)
from .features import FeatureMap
from .intervals import SolverDivergenceError
from .mdp import TabularMdp, TabularPolicy, exact_policy_value

__all__ = ["METHODS", "CSV_HEADER", "ExperimentConfig", "CoverageRow", "Environment",
           "build_environment", "trial_seed", "run_trial", "run_coverage_experiment",
           "rows_to_csv", "emit_plots"]

METHODS = ("coindice_kl", "coindice_chi2", "coindice_rkl", "bernstein", "t_test", "bootstrap",
           "bernstein_wis", "t_test_wis", "bootstrap_wis")
CSV_HEADER = ("method", "n", "level", "coverage", "median_log_width", "failures", "mean_runtime_s")
_DIVERGENCE = {"coindice_kl": "modified_kl", "coindice_chi2": "chi_square",
               "coindice_rkl": "reverse_kl"}
# Slack for comparing a bound against the true value; a degenerate interval
# computed in floating point can miss an exactly representable value by an ulp.
_CONTAIN_TOL = 1e-9


@dataclass(frozen=True)
class ExperimentConfig:
    """One coverage sweep.

    ``environment`` is a dict with ``kind`` in ``{"bandit", "gridworld",
    "constant"}`` plus that environment's parameters.  ``sizes`` counts
    trajectories (bandit rounds for the bandit).  ``timing=False`` writes
    ``nan`` in the runtime column so repeated runs give identical CSVs.
    """

    environment: dict
    sizes: tuple = (200,)
    levels: tuple = (0.9,)
    n_trials: int = 200
    methods: tuple = ("coindice_kl", "bernstein", "t_test", "bootstrap")
    solver: SolverConfig = field(default_factory=SolverConfig)
    master_seed: int = 0
    output_dir: Optional[str] = None
    horizon: int = 1
    n_boot: int = 2000
    timing: bool = False
    workers: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError("sizes must be a nonempty list of positive counts")
        if not self.levels or any(not 0.0 < v < 1.0 for v in self.levels):
            raise ValueError("levels must lie in (0, 1)")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"methods: unknown method(s) {bad}; choose from {METHODS}")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if "kind" not in self.environment:
            raise ValueError("environment.kind is required")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown experiment config field(s): {sorted(unknown)}")
        if "environment" not in doc:
            raise ValueError("missing required field 'environment'")
        doc = dict(doc)
        if "solver" in doc:
            doc["solver"] = SolverConfig.from_dict(doc["solver"])
        try:
            return cls(**doc)
        except TypeError as err:
            raise ValueError(str(err)) from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class CoverageRow:
    method: str
    n: int
    level: float
    coverage: float
    median_log_width: float
    failures: int
    mean_runtime_s: float

    def __post_init__(self):
        if not (0.0 <= self.coverage <= 1.0 or math.isnan(self.coverage)):
            raise ValueError("coverage must lie in [0, 1]")


@dataclass(frozen=True)
class Environment:
    mdp: TabularMdp
    target: TabularPolicy
    behavior: TabularPolicy
    truth: float
    kind: str


def build_environment(doc: dict) -> Environment:
    """MDP, (target, behavior) policies and the exact target value from a config dict."""
    doc = dict(doc)
    kind = doc.pop("kind")
    if kind == "bandit":
        gamma = doc.pop("gamma", 0.9)
        mdp, target, behavior = bandit_to_mdp(BanditSpec(**doc), gamma)
    elif kind == "gridworld":
        behavior_noise = doc.pop("behavior_noise", 0.2)
        target_noise = doc.pop("target_noise", 0.05)
        mdp = gridworld_to_mdp(GridworldSpec(**doc))
        target, behavior = gridworld_policies(mdp, behavior_noise, target_noise)
    elif kind == "constant":
        # One state, one action, reward fixed at ``reward``: every estimator should collapse.
        c = float(doc.pop("reward", 1.0))
        r_max = float(doc.pop("r_max", max(c, 1.0)))
        mdp = TabularMdp(np.ones((1, 1, 1)), np.full((1, 1), c), np.full((1, 1), c), np.ones((1, 1)),
                         np.ones(1), float(doc.pop("gamma", 0.9)), r_max, name="constant")
        target = behavior = TabularPolicy(np.ones((1, 1)))
    else:
        raise ValueError(f"environment.kind: unknown kind {kind!r}")
    return Environment(mdp, target, behavior, exact_policy_value(mdp, target), kind)


def trial_seed(master_seed: int, method: str, n: int, level: float, trial: int) -> int:
    key = f"{master_seed}|{method}|{n}|{level:.12g}|{trial}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def run_trial(env: Environment, method: str, n: int, level: float, seed: int,
              config: ExperimentConfig):
    """One dataset and one interval; returns ``(lower, upper, runtime)``."""
    horizon = 1 if env.kind == "bandit" else config.horizon
    data = collect_dataset(env.mdp, env.behavior, env.target, n, horizon, seed)
    alpha = 1.0 - level
    start = time.perf_counter()
    if method in _DIVERGENCE:
        div = _DIVERGENCE[method]
        if env.kind == "bandit":
            ci = coin_bandit_interval(data, env.target, alpha=alpha, divergence=div,
                                      config=config.solver)
        else:
            fmap = FeatureMap(env.mdp.n_states, env.mdp.n_actions)
            ci = solve_bounds(data, fmap, env.target, env.mdp.gamma, alpha, div, config.solver)
    else:
        base, weighted, _ = method.partition("_wis")
        est = baselines.stepwise_is_estimates(data, env.target, env.behavior, env.mdp.gamma,
                                              self_normalize=bool(weighted))
        if base == "bernstein":
            ci = baselines.bernstein_interval(est, alpha)
        elif base == "t_test":
            ci = baselines.t_interval(est, alpha)
        else:
            ci = baselines.bca_bootstrap_interval(est, alpha, config.n_boot, seed)
    return ci.lower, ci.upper, time.perf_counter() - start


def _run_task(task):
    env, method, n, level, seed, config = task
    try:
        return run_trial(env, method, n, level, seed, config)
    except (SolverDivergenceError, ValueError, np.linalg.LinAlgError, FloatingPointError):
        return None


def _worker_count(config: ExperimentConfig) -> int:
    cap = os.environ.get("HCOPE_THREADS")
    workers = config.workers or os.cpu_count() or 1
    if cap:
        workers = min(workers, max(1, int(cap)))
    return max(1, workers)


def _aggregate(method, n, level, results, truth) -> CoverageRow:
    done = [r for r in results if r is not None]
    failures = len(results) - len(done)
    if not done:
        return CoverageRow(method, n, level, float("nan"), float("nan"), failures, float("nan"))
    tol = _CONTAIN_TOL * max(1.0, abs(truth))
    hits = sum(lo - tol <= truth <= hi + tol for lo, hi, _ in done)
    widths = np.array([hi - lo for lo, hi, _ in done])
    with np.errstate(divide="ignore"):
        logw = np.log(np.maximum(widths, 0.0))
    return CoverageRow(method, n, level, hits / len(done), float(np.median(logw)), failures,
                       float(np.mean([t for _, _, t in done])))


def run_coverage_experiment(config: ExperimentConfig):
    """Run every cell, write ``coverage.csv`` (when ``output_dir`` is set) and return the rows."""
    env = build_environment(config.environment)
    cells, tasks = [], []
    for method in config.methods:
        for n in config.sizes:
            for level in config.levels:
                cells.append((method, n, level))
                tasks.extend((env, method, n, level,
                              trial_seed(config.master_seed, method, n, level, t), config)
                             for t in range(config.n_trials))
    workers = _worker_count(config)
    if workers == 1:
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    rows = []
    for k, (method, n, level) in enumerate(cells):
        chunk = results[k * config.n_trials:(k + 1) * config.n_trials]
        rows.append(_aggregate(method, n, level, chunk, env.truth))
    if config.output_dir is not None:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "coverage.csv").write_text(rows_to_csv(rows, config.timing))
    return rows


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return repr(float(x))


def rows_to_csv(rows, timing: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([r.method, r.n, _fmt(r.level), _fmt(r.coverage), _fmt(r.median_log_width),
                         r.failures, _fmt(r.mean_runtime_s) if timing else "nan"])
    return buf.getvalue()


def emit_plots(rows, output_dir, prefix: str = ""):
    """Coverage-vs-level and log-width-vs-level SVGs, one pair per dataset size.

    Each chart has one series per method; coverage charts also draw ``y = x``.
    Returns the written paths.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = list(rows)
    if not rows:
        raise ValueError("no rows to plot")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    methods = list(dict.fromkeys(r.method for r in rows))
    for n in sorted({r.n for r in rows}):
        sub = [r for r in rows if r.n == n]
        for metric, label in (("coverage", "empirical coverage"), ("median_log_width", "median log width")):
            fig, ax = plt.subplots(figsize=(4.5, 3.5))
            if metric == "coverage":
                ax.plot([0, 1], [0, 1], color="0.6", linestyle="--", linewidth=1, label="nominal")
            for method in methods:
                pts = sorted((r.level, getattr(r, metric)) for r in sub if r.method == method)
                if pts:
                    xs, ys = zip(*pts)
                    ax.plot(xs, ys, marker="o", label=method)
            ax.set_xlabel("confidence level")
            ax.set_ylabel(label)
            ax.set_title(f"n = {n}")
            ax.legend(fontsize=7)
            fig.tight_layout()
            path = out / f"{prefix}{metric}_n{n}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths
