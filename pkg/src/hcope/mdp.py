"""Finite MDPs, tabular policies and exact dynamic-programming oracles.

State-action pairs are flattened to a single "cell" index ``c = s * n_actions + a``
everywhere in the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

_ATOL = 1e-12


def _as_float_array(x, shape=None, name="array"):
    arr = np.array(x, dtype=float)
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """A finite MDP with bounded two-point reward laws.

    The immediate reward of ``(s, a)`` is ``reward_high[s, a]`` with probability
    ``reward_prob[s, a]`` and ``reward_low[s, a]`` otherwise, plus the
    deterministic ``transition_reward[s, a, s']`` collected on landing in ``s'``
    (all zeros unless given).  Point masses are the special case
    ``reward_prob in {0, 1}``.
    """

    transition: np.ndarray
    reward_low: np.ndarray
    reward_high: np.ndarray
    reward_prob: np.ndarray
    mu0: np.ndarray
    gamma: float
    r_max: float
    transition_reward: Optional[np.ndarray] = None
    name: str = field(default="mdp")

    def __post_init__(self):
        T = _as_float_array(self.transition, name="transition")
        if T.ndim != 3 or T.shape[0] != T.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {T.shape}")
        S, A, _ = T.shape
        object.__setattr__(self, "transition", T)
        for attr in ("reward_low", "reward_high", "reward_prob"):
            object.__setattr__(self, attr, _as_float_array(getattr(self, attr), (S, A), attr))
        object.__setattr__(self, "mu0", _as_float_array(self.mu0, (S,), "mu0"))
        if self.transition_reward is None:
            tr = np.zeros((S, A, S))
        else:
            tr = self.transition_reward
        object.__setattr__(self, "transition_reward", _as_float_array(tr, (S, A, S), "transition_reward"))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", float(self.r_max))
        self._validate()

    def _validate(self):
        T = self.transition
        if np.any(T < 0) or np.any(np.abs(T.sum(axis=2) - 1.0) > _ATOL):
            raise ValueError("every transition row must be a probability distribution")
        if np.any(self.mu0 < 0) or abs(self.mu0.sum() - 1.0) > _ATOL:
            raise ValueError("mu0 must be a probability distribution")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.r_max <= 0:
            raise ValueError("r_max must be positive")
        p = self.reward_prob
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("reward_prob entries must lie in [0, 1]")
        # Only transitions with positive probability can realise a reward.
        reach = T > 0
        tr = np.where(reach, self.transition_reward, 0.0)
        tr_lo = np.where(reach, self.transition_reward, np.inf).min(axis=2)
        tr_hi = tr.max(axis=2)
        lo = np.minimum(self.reward_low, self.reward_high) + tr_lo
        hi = np.maximum(self.reward_low, self.reward_high) + tr_hi
        if np.any(lo < -_ATOL) or np.any(hi > self.r_max + _ATOL):
            raise ValueError("reward draws must lie in [0, r_max]")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_cells(self) -> int:
        return self.n_states * self.n_actions

    @property
    def reward_mean(self) -> np.ndarray:
        """Expected immediate reward table of shape (S, A)."""
        base = self.reward_low + self.reward_prob * (self.reward_high - self.reward_low)
        return base + np.einsum("sat,sat->sa", self.transition, self.transition_reward)

    def with_gamma(self, gamma: float) -> "TabularMdp":
        return TabularMdp(self.transition, self.reward_low, self.reward_high, self.reward_prob,
                          self.mu0, gamma, self.r_max, self.transition_reward, self.name)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "states": self.n_states,
            "actions": self.n_actions,
            "transition": self.transition.ravel().tolist(),
            "reward": self.reward_mean.ravel().tolist(),
            "reward_low": self.reward_low.ravel().tolist(),
            "reward_high": self.reward_high.ravel().tolist(),
            "reward_prob": self.reward_prob.ravel().tolist(),
            "transition_reward": self.transition_reward.ravel().tolist(),
            "mu0": self.mu0.tolist(),
            "gamma": self.gamma,
            "r_max": self.r_max,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        try:
            S, A = int(doc["states"]), int(doc["actions"])
            transition = np.reshape(doc["transition"], (S, A, S))
            if "reward_low" in doc:
                low = np.reshape(doc["reward_low"], (S, A))
                high = np.reshape(doc["reward_high"], (S, A))
                prob = np.reshape(doc["reward_prob"], (S, A))
            else:
                # A plain reward table means deterministic rewards.
                low = high = np.reshape(doc["reward"], (S, A))
                prob = np.ones((S, A))
            tr = doc.get("transition_reward")
            tr = None if tr is None else np.reshape(tr, (S, A, S))
            return cls(transition, low, high, prob, np.asarray(doc["mu0"], dtype=float),
                       float(doc["gamma"]), float(doc["r_max"]), tr, doc.get("name", "mdp"))
        except KeyError as exc:
            raise ValueError(f"MDP document is missing field {exc.args[0]!r}") from None

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Row-stochastic table ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        P = _as_float_array(self.probs, name="probs")
        if P.ndim != 2:
            raise ValueError("policy table must be 2-D (states x actions)")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > _ATOL):
            raise ValueError("each policy row must be a probability distribution")
        object.__setattr__(self, "probs", P)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    def mix(self, other: "TabularPolicy", weight: float) -> "TabularPolicy":
        """Return ``(1 - weight) * self + weight * other``."""
        return TabularPolicy((1.0 - weight) * self.probs + weight * other.probs)

    def to_dict(self) -> dict:
        return {"states": self.n_states, "actions": self.n_actions,
                "probs": self.probs.ravel().tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularPolicy":
        try:
            return cls(np.reshape(doc["probs"], (int(doc["states"]), int(doc["actions"]))))
        except KeyError as exc:
            raise ValueError(f"policy document is missing field {exc.args[0]!r}") from None


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d", _as_float_array(self.d, name="d"))

    @property
    def flat(self) -> np.ndarray:
        return self.d.ravel()


def _check_compatible(mdp: TabularMdp, policy: TabularPolicy):
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {policy.probs.shape} does not match MDP "
                         f"({mdp.n_states}, {mdp.n_actions})")


def _require_discounted(mdp: TabularMdp):
    if mdp.gamma >= 1.0:
        raise ValueError("gamma = 1 makes the discounted Bellman system singular; "
                         "use stationary_distribution / exact_average_reward or the "
                         "undiscounted CoinDICE mode instead")


def policy_cell_transition(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """Cell-to-cell matrix ``P[c, c'] = T(s'|s,a) pi(a'|s')``."""
    _check_compatible(mdp, policy)
    P = np.einsum("sat,tb->satb", mdp.transition, policy.probs)
    return P.reshape(mdp.n_cells, mdp.n_cells)


def initial_cell_distribution(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    return (mdp.mu0[:, None] * policy.probs).ravel()


def exact_q_function(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """Solve ``Q = R + gamma P^pi Q`` by a dense LU solve; returns shape (S, A)."""
    _require_discounted(mdp)
    P = policy_cell_transition(mdp, policy)
    lhs = np.eye(mdp.n_cells) - mdp.gamma * P
    q = np.linalg.solve(lhs, mdp.reward_mean.ravel())
    return q.reshape(mdp.n_states, mdp.n_actions)


def exact_policy_value(mdp: TabularMdp, policy: TabularPolicy) -> float:
    """Normalized discounted value ``(1 - gamma) E_{mu0 pi}[Q(s0, a0)]``."""
    q = exact_q_function(mdp, policy)
    return float((1.0 - mdp.gamma) * initial_cell_distribution(mdp, policy) @ q.ravel())


def exact_occupancy(mdp: TabularMdp, policy: TabularPolicy) -> OccupancyMeasure:
    """Normalized discounted state-action visitation ``d^pi``."""
    _require_discounted(mdp)
    P = policy_cell_transition(mdp, policy)
    lhs = np.eye(mdp.n_cells) - mdp.gamma * P.T
    d = np.linalg.solve(lhs, (1.0 - mdp.gamma) * initial_cell_distribution(mdp, policy))
    return OccupancyMeasure(d.reshape(mdp.n_states, mdp.n_actions))


def stationary_distribution(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """Stationary state-action distribution of the chain induced by ``policy``.

    Assumes the chain is irreducible on its recurrent class; solved as the
    least-squares solution of ``d = P^T d`` with ``sum(d) = 1``.
    """
    P = policy_cell_transition(mdp, policy)
    n = mdp.n_cells
    system = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    d, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    d = np.clip(d, 0.0, None)
    return (d / d.sum()).reshape(mdp.n_states, mdp.n_actions)


def exact_average_reward(mdp: TabularMdp, policy: TabularPolicy) -> float:
    """Long-run average reward, the ``gamma = 1`` analogue of the policy value."""
    d = stationary_distribution(mdp, policy)
    return float((d * mdp.reward_mean).sum())


def optimal_policy(mdp: TabularMdp, tol: float = 1e-10, max_iter: int = 100_000) -> TabularPolicy:
    """Greedy deterministic policy from value iteration (ties go to the lowest action)."""
    _require_discounted(mdp)
    R = mdp.reward_mean
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        q = R + mdp.gamma * mdp.transition @ v
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    q = R + mdp.gamma * mdp.transition @ v
    # Round before argmax so numerically tied actions resolve deterministically.
    greedy = np.argmax(np.round(q, 9), axis=1)
    return TabularPolicy.deterministic(greedy, mdp.n_actions)


def random_mdp(n_states: int, n_actions: int, seed: int, gamma: float = 0.9,
               r_max: float = 1.0, concentration: float = 1.0) -> TabularMdp:
    """Seeded MDP with Dirichlet transitions and Bernoulli-scaled rewards."""
    rng = np.random.default_rng(seed)
    T = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    prob = rng.uniform(size=(n_states, n_actions))
    mu0 = rng.dirichlet(np.ones(n_states))
    zeros = np.zeros((n_states, n_actions))
    return TabularMdp(T, zeros, np.full((n_states, n_actions), r_max), prob, mu0,
                      gamma, r_max, name=f"random-{n_states}x{n_actions}-{seed}")


def random_policy(n_states: int, n_actions: int, seed: int) -> TabularPolicy:
    rng = np.random.default_rng(seed)
    return TabularPolicy(rng.dirichlet(np.ones(n_actions), size=n_states))
