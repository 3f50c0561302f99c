"""Benchmark environments and augmented off-policy datasets.

Datasets are generated with numpy's PCG64 bit generator (``np.random.default_rng``),
so a given seed reproduces the same tuples on any platform numpy supports.
"""

from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .mdp import TabularMdp, TabularPolicy, optimal_policy

__all__ = [
    "BanditSpec", "GridworldSpec", "Dataset", "bandit_to_mdp", "gridworld_to_mdp",
    "gridworld_policies", "frozen_lake_spec", "collect_dataset",
]

# Action order follows FrozenLake: left, down, right, up.
_MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))


@dataclass(frozen=True)
class BanditSpec:
    arm_reward_probs: Sequence[float] = (0.8, 0.2)
    target_optimal_prob: float = 0.95
    behavior_optimal_prob: float = 0.55

    def __post_init__(self):
        probs = tuple(float(p) for p in self.arm_reward_probs)
        object.__setattr__(self, "arm_reward_probs", probs)
        if len(probs) < 2:
            raise ValueError("a bandit needs at least 2 arms")
        for name, p in (("arm_reward_probs", min(probs)), ("arm_reward_probs", max(probs)),
                        ("target_optimal_prob", self.target_optimal_prob),
                        ("behavior_optimal_prob", self.behavior_optimal_prob)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def _arm_policy(n_arms: int, best: int, p_best: float) -> TabularPolicy:
    probs = np.full(n_arms, (1.0 - p_best) / (n_arms - 1))
    probs[best] = p_best
    return TabularPolicy(probs[None, :])


def bandit_to_mdp(spec: BanditSpec, gamma: float = 0.9):
    """One-state MDP with one action per arm, plus (target, behavior) policies.

    The optimal arm receives ``*_optimal_prob``; the remaining mass is spread
    evenly over the other arms.  Normalized values do not depend on ``gamma``.
    """
    k = len(spec.arm_reward_probs)
    probs = np.asarray(spec.arm_reward_probs)[None, :]
    mdp = TabularMdp(np.ones((1, k, 1)), np.zeros((1, k)), np.ones((1, k)), probs,
                     np.ones(1), gamma, 1.0, name="bandit")
    best = int(np.argmax(spec.arm_reward_probs))
    return mdp, _arm_policy(k, best, spec.target_optimal_prob), _arm_policy(k, best, spec.behavior_optimal_prob)


@dataclass(frozen=True)
class GridworldSpec:
    width: int = 4
    height: int = 4
    slip_prob: float = 2.0 / 3.0
    goal_cells: frozenset = frozenset({(3, 3)})
    hole_cells: frozenset = frozenset({(1, 1), (1, 3), (2, 3), (3, 0)})
    start_cells: tuple = ((0, 0),)
    step_reward: float = 0.0
    goal_reward: float = 1.0
    gamma: float = 0.99

    def __post_init__(self):
        for attr in ("goal_cells", "hole_cells"):
            object.__setattr__(self, attr, frozenset(tuple(c) for c in getattr(self, attr)))
        object.__setattr__(self, "start_cells", tuple(tuple(c) for c in self.start_cells))
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be positive")
        if not 0.0 <= self.slip_prob <= 1.0:
            raise ValueError("slip_prob must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.goal_cells & self.hole_cells:
            raise ValueError("goal and hole cells must be disjoint")
        if self.step_reward < 0 or self.goal_reward < 0:
            raise ValueError("rewards must be nonnegative")
        cells = self.goal_cells | self.hole_cells | set(self.start_cells)
        for r, c in cells:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise ValueError(f"cell {(r, c)} lies outside the grid")
        if not self.start_cells:
            raise ValueError("at least one start cell is required")
        if set(self.start_cells) & (self.goal_cells | self.hole_cells):
            raise ValueError("start cells must not be goal or hole cells")

    def state_id(self, cell) -> int:
        return cell[0] * self.width + cell[1]

    @property
    def n_states(self) -> int:
        return self.width * self.height


def frozen_lake_spec(slip_prob: float = 2.0 / 3.0, gamma: float = 0.99) -> GridworldSpec:
    """4x4 layout in the spirit of FrozenLake (S at top-left, G at bottom-right)."""
    return GridworldSpec(slip_prob=slip_prob, gamma=gamma)


def _reachable_goal(spec: GridworldSpec) -> bool:
    seen = set(spec.start_cells)
    queue = deque(spec.start_cells)
    while queue:
        cell = queue.popleft()
        if cell in spec.goal_cells:
            return True
        if cell in spec.hole_cells:
            continue
        for dr, dc in _MOVES:
            nxt = (min(max(cell[0] + dr, 0), spec.height - 1), min(max(cell[1] + dc, 0), spec.width - 1))
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return False


def gridworld_to_mdp(spec: GridworldSpec) -> TabularMdp:
    """Infinite-horizon gridworld: terminal cells reset to a start cell.

    The goal reward is paid on the transition that enters a goal cell; the step
    reward is paid on every step taken from a non-terminal cell.
    """
    if not _reachable_goal(spec):
        warnings.warn("no goal cell is reachable from the start cells; every policy has "
                      "value equal to the step reward", RuntimeWarning, stacklevel=2)
    S, A = spec.n_states, 4
    mu0 = np.zeros(S)
    for cell in spec.start_cells:
        mu0[spec.state_id(cell)] += 1.0 / len(spec.start_cells)
    T = np.zeros((S, A, S))
    tr = np.zeros((S, A, S))
    base = np.zeros((S, A))
    terminal = spec.goal_cells | spec.hole_cells
    goal_ids = [spec.state_id(c) for c in spec.goal_cells]
    for r in range(spec.height):
        for c in range(spec.width):
            s = spec.state_id((r, c))
            if (r, c) in terminal:
                T[s, :, :] = mu0
                continue
            base[s, :] = spec.step_reward
            for a in range(A):
                lateral = ((a - 1) % 4, (a + 1) % 4)
                outcomes = [(a, 1.0 - spec.slip_prob)] + [(b, spec.slip_prob / 2.0) for b in lateral]
                for move, p in outcomes:
                    if p == 0.0:
                        continue
                    dr, dc = _MOVES[move]
                    nr = min(max(r + dr, 0), spec.height - 1)
                    nc = min(max(c + dc, 0), spec.width - 1)
                    T[s, a, spec.state_id((nr, nc))] += p
                tr[s, a, goal_ids] = spec.goal_reward
    # Accumulated slip probabilities can drift from 1 by an ulp or two.
    T /= T.sum(axis=2, keepdims=True)
    return TabularMdp(T, base, base, np.ones((S, A)), mu0, spec.gamma,
                      spec.step_reward + spec.goal_reward, tr, name="gridworld")


def gridworld_policies(mdp: TabularMdp, behavior_noise: float = 0.2, target_noise: float = 0.05):
    """(target, behavior): the optimal policy mixed with uniform noise at two rates."""
    best = optimal_policy(mdp)
    uniform = TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    return best.mix(uniform, target_noise), best.mix(uniform, behavior_noise)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Augmented transitions ``(s0, a0, s, a, r, s', a')`` stored column-wise.

    ``(s, a, r, s')`` come from behavior experience; ``a0`` and ``a'`` are drawn
    from the target policy.  Tuples of one trajectory are contiguous and in
    time order, which the importance-sampling baselines rely on.
    """

    s0: np.ndarray
    a0: np.ndarray
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    sp: np.ndarray
    ap: np.ndarray
    traj_id: np.ndarray
    n_states: int
    n_actions: int
    r_max: float
    n_trajectories: int = 0
    horizon: int = 0
    seed: Optional[int] = None
    behavior_tag: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("s0", "a0", "s", "a", "sp", "ap", "traj_id"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        r = np.asarray(self.r, dtype=float)
        r.setflags(write=False)
        object.__setattr__(self, "r", r)
        n = r.size
        if any(getattr(self, k).size != n for k in ("s0", "a0", "s", "a", "sp", "ap", "traj_id")):
            raise ValueError("all dataset columns must have the same length")
        for name in ("s0", "s", "sp"):
            col = getattr(self, name)
            if n and (col.min() < 0 or col.max() >= self.n_states):
                raise ValueError(f"state ids in {name!r} out of range")
        for name in ("a0", "a", "ap"):
            col = getattr(self, name)
            if n and (col.min() < 0 or col.max() >= self.n_actions):
                raise ValueError(f"action ids in {name!r} out of range")
        if n and (r.min() < 0 or r.max() > self.r_max + 1e-12):
            raise ValueError("rewards must lie in [0, r_max]")

    def __len__(self) -> int:
        return self.r.size

    @property
    def cell(self) -> np.ndarray:
        return self.s * self.n_actions + self.a

    @property
    def next_cell(self) -> np.ndarray:
        return self.sp * self.n_actions + self.ap

    @property
    def init_cell(self) -> np.ndarray:
        return self.s0 * self.n_actions + self.a0

    @property
    def step(self) -> np.ndarray:
        """Time index of each tuple within its trajectory."""
        n = len(self)
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        starts = np.r_[True, self.traj_id[1:] != self.traj_id[:-1]]
        start_idx = np.maximum.accumulate(np.where(starts, np.arange(n), 0))
        return np.arange(n) - start_idx

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.s0[idx], self.a0[idx], self.s[idx], self.a[idx], self.r[idx],
                       self.sp[idx], self.ap[idx], self.traj_id[idx], self.n_states,
                       self.n_actions, self.r_max, self.n_trajectories, self.horizon,
                       self.seed, self.behavior_tag, dict(self.meta))

    # -- JSON-lines persistence -------------------------------------------

    def header(self) -> dict:
        return {"seed": self.seed, "n_tuples": len(self), "n_trajectories": self.n_trajectories,
                "horizon": self.horizon, "behavior_tag": self.behavior_tag,
                "n_states": self.n_states, "n_actions": self.n_actions, "r_max": self.r_max,
                **({"meta": self.meta} if self.meta else {})}

    def iter_jsonl(self) -> Iterable[str]:
        yield json.dumps(self.header(), sort_keys=True)
        cols = (self.s0, self.a0, self.s, self.a, self.r, self.sp, self.ap, self.traj_id)
        for s0, a0, s, a, r, sp, ap, tid in zip(*(c.tolist() for c in cols)):
            yield json.dumps({"s0": s0, "a0": a0, "s": s, "a": a, "r": r,
                              "sp": sp, "ap": ap, "traj_id": tid})

    def to_jsonl(self) -> str:
        return "\n".join(self.iter_jsonl()) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "Dataset":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty dataset file")
        head = json.loads(lines[0])
        rows = [json.loads(ln) for ln in lines[1:]]
        try:
            cols = {k: [row[k] for row in rows] for k in ("s0", "a0", "s", "a", "r", "sp", "ap", "traj_id")}
            return cls(**cols, n_states=int(head["n_states"]), n_actions=int(head["n_actions"]),
                       r_max=float(head["r_max"]), n_trajectories=int(head.get("n_trajectories", 0)),
                       horizon=int(head.get("horizon", 0)), seed=head.get("seed"),
                       behavior_tag=head.get("behavior_tag", ""), meta=head.get("meta", {}))
        except KeyError as exc:
            raise ValueError(f"dataset record is missing field {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path) as fh:
            return cls.from_jsonl(fh.read())


def _categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One inverse-CDF draw per row of ``probs``."""
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def collect_dataset(mdp: TabularMdp, behavior: TabularPolicy, target: TabularPolicy,
                    n_trajectories: int, horizon: int, seed: int,
                    behavior_tag: str = "behavior") -> Dataset:
    """Roll out ``n_trajectories`` behavior trajectories of length ``horizon``.

    Every logged step is paired with a fresh ``s0 ~ mu0``, ``a0 ~ target(s0)``
    and ``a' ~ target(s')``.  All trajectories advance in lock-step, and the
    per-step draw order is fixed: behavior action, next state, reward, s0, a0, a'.
    """
    if horizon < 1 or n_trajectories < 1:
        raise ValueError("horizon and n_trajectories must be at least 1")
    rng = np.random.default_rng(seed)
    m, H = n_trajectories, horizon
    cols = {k: np.zeros((m, H), dtype=np.int64) for k in ("s0", "a0", "s", "a", "sp", "ap")}
    rew = np.zeros((m, H))
    state = _categorical(rng, np.broadcast_to(mdp.mu0, (m, mdp.n_states)))
    for t in range(H):
        act = _categorical(rng, behavior.probs[state])
        nxt = _categorical(rng, mdp.transition[state, act])
        hit = rng.random(m) < mdp.reward_prob[state, act]
        r = np.where(hit, mdp.reward_high[state, act], mdp.reward_low[state, act])
        r = r + mdp.transition_reward[state, act, nxt]
        s0 = _categorical(rng, np.broadcast_to(mdp.mu0, (m, mdp.n_states)))
        a0 = _categorical(rng, target.probs[s0])
        ap = _categorical(rng, target.probs[nxt])
        for key, val in (("s0", s0), ("a0", a0), ("s", state), ("a", act), ("sp", nxt), ("ap", ap)):
            cols[key][:, t] = val
        rew[:, t] = r
        state = nxt
    traj = np.repeat(np.arange(m), H)
    return Dataset(**{k: v.ravel() for k, v in cols.items()}, r=rew.ravel(), traj_id=traj,
                   n_states=mdp.n_states, n_actions=mdp.n_actions, r_max=mdp.r_max,
                   n_trajectories=m, horizon=H, seed=seed, behavior_tag=behavior_tag)
