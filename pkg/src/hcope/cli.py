"""Command-line entry point ``hcope``.

Exit codes: 0 success, 1 invalid input or configuration, 2 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from . import baselines
from .coindice import (SolverConfig, coin_bandit_interval, solve_bounds,
                       solve_bounds_undiscounted)
from .envs import Dataset, collect_dataset
from .features import FeatureMap
from .harness import ExperimentConfig, build_environment, emit_plots, rows_to_csv, run_coverage_experiment
from .intervals import SolverDivergenceError
from .mdp import TabularMdp, TabularPolicy, exact_average_reward, exact_policy_value

EVAL_METHODS = ("coindice_kl", "coindice_chi2", "coindice_rkl", "bernstein", "t_test", "bootstrap")
_DIVERGENCE = {"coindice_kl": "modified_kl", "coindice_chi2": "chi_square", "coindice_rkl": "reverse_kl"}


def _read_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ValueError(f"{what} file {path} is not valid JSON: {err}") from None


def _shipped_config(name):
    ref = resources.files("hcope") / "configs" / f"{name}.json"
    if not ref.is_file():
        return None
    return json.loads(ref.read_text())


def _load_environment(spec):
    """``spec`` is a shipped preset name or a path to a JSON environment dict."""
    shipped = _shipped_config(spec)
    if shipped is not None:
        return shipped["environment"]
    doc = _read_json(spec, "environment")
    return doc.get("environment", doc)


def cmd_gen_data(args):
    env_doc = _load_environment(args.env)
    env = build_environment(env_doc)
    horizon = 1 if env.kind == "bandit" else args.horizon
    data = collect_dataset(env.mdp, env.behavior, env.target, args.n_trajectories, horizon, args.seed)
    data = Dataset(data.s0, data.a0, data.s, data.a, data.r, data.sp, data.ap, data.traj_id,
                   data.n_states, data.n_actions, data.r_max, data.n_trajectories, data.horizon,
                   data.seed, env.kind, {"environment": env_doc})
    if args.out:
        data.save(args.out)
    else:
        sys.stdout.writelines(line + "\n" for line in data.iter_jsonl())
    return 0


def _policies(args, data):
    env_doc = data.meta.get("environment")
    env = build_environment(env_doc) if env_doc else None
    target = behavior = None
    if args.target_policy:
        target = TabularPolicy.from_dict(_read_json(args.target_policy, "target policy"))
    elif env is not None:
        target = env.target
    if args.behavior_policy:
        behavior = TabularPolicy.from_dict(_read_json(args.behavior_policy, "behavior policy"))
    elif env is not None:
        behavior = env.behavior
    gamma = args.gamma if args.gamma is not None else (env.mdp.gamma if env else None)
    return env, target, behavior, gamma


def cmd_evaluate(args):
    data = Dataset.load(args.data)
    env, target, behavior, gamma = _policies(args, data)
    alpha = args.alpha
    xi = 0.0 if args.xi_zero else args.xi
    config = SolverConfig.from_dict(_read_json(args.solver_config, "solver config")) if args.solver_config else SolverConfig()
    if args.method in _DIVERGENCE:
        div = _DIVERGENCE[args.method]
        bandit = args.bandit or (env is not None and env.kind == "bandit")
        if bandit:
            if target is None:
                raise ValueError("bandit evaluation needs a target policy (--target-policy)")
            ci = coin_bandit_interval(data, target, alpha=alpha, divergence=div, config=config, xi=xi)
        else:
            if args.features == "indicator":
                fmap = FeatureMap(data.n_states, data.n_actions)
            else:
                fmap = FeatureMap.random_full_rank(data.n_states, data.n_actions, args.feature_seed)
            if gamma is None:
                raise ValueError("gamma is required (--gamma) when the dataset carries no environment")
            if gamma >= 1.0:
                ci = solve_bounds_undiscounted(data, fmap, target, alpha, div, config, xi=xi)
            else:
                ci = solve_bounds(data, fmap, target, gamma, alpha, div, config, xi=xi)
    else:
        if target is None or behavior is None:
            raise ValueError("importance-sampling baselines need both target and behavior policies")
        est = baselines.stepwise_is_estimates(data, target, behavior, 1.0 if gamma is None else gamma)
        if args.method == "bernstein":
            ci = baselines.bernstein_interval(est, alpha)
        elif args.method == "t_test":
            ci = baselines.t_interval(est, alpha)
        else:
            ci = baselines.bca_bootstrap_interval(est, alpha, args.n_boot, args.seed)
    print(ci.to_json())
    return 0


def cmd_coverage(args):
    doc = _shipped_config(args.config) if not Path(args.config).exists() else None
    if doc is None:
        doc = _read_json(args.config, "experiment config")
    if args.out:
        doc = dict(doc, output_dir=args.out)
    if args.trials is not None:
        doc = dict(doc, n_trials=args.trials)
    if args.workers is not None:
        doc = dict(doc, workers=args.workers)
    config = ExperimentConfig.from_dict(doc)
    rows = run_coverage_experiment(config)
    if config.output_dir is None:
        sys.stdout.write(rows_to_csv(rows, config.timing))
    elif not args.no_plots:
        emit_plots(rows, config.output_dir)
    return 0


def cmd_oracle(args):
    mdp = TabularMdp.from_dict(_read_json(args.mdp, "MDP"))
    policy = TabularPolicy.from_dict(_read_json(args.policy, "policy"))
    if args.gamma is not None:
        mdp = mdp.with_gamma(args.gamma)
    value = exact_average_reward(mdp, policy) if mdp.gamma >= 1.0 else exact_policy_value(mdp, policy)
    print(round(value, 12))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hcope", description="High-confidence off-policy evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample a dataset as JSON lines")
    p.add_argument("--env", required=True, help="'bandit', 'gridworld' or a JSON environment file")
    p.add_argument("--n-trajectories", type=int, default=200)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("evaluate", help="print one confidence interval as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=EVAL_METHODS, default="coindice_kl")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--xi", type=float, help="override the divergence radius")
    p.add_argument("--xi-zero", action="store_true", help="debug: zero radius, bounds equal the point estimate")
    p.add_argument("--gamma", type=float)
    p.add_argument("--target-policy")
    p.add_argument("--behavior-policy")
    p.add_argument("--bandit", action="store_true", help="treat every tuple as one bandit round")
    p.add_argument("--features", choices=("indicator", "full_rank"), default="indicator")
    p.add_argument("--feature-seed", type=int, default=0)
    p.add_argument("--solver-config")
    p.add_argument("--n-boot", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("coverage", help="run a coverage experiment")
    p.add_argument("config", help="experiment JSON file, or a shipped name ('bandit', 'gridworld')")
    p.add_argument("--out", help="override output_dir")
    p.add_argument("--trials", type=int, help="override n_trials")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("oracle", help="exact value of a policy in a tabular MDP")
    p.add_argument("--mdp", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--gamma", type=float)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SolverDivergenceError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError, IndexError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
