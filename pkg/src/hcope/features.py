"""Feature maps over state-action cells and estimating-equation residuals."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

__all__ = ["FeatureMap", "TauTable", "Transition", "phi", "delta", "delta_bar", "bandit_residual"]

_KINDS = ("indicator", "full_rank_matrix", "custom_linear")


class Transition(NamedTuple):
    """One augmented sample ``x = (s0, a0, s, a, r, s', a')``."""

    s0: int
    a0: int
    s: int
    a: int
    r: float
    sp: int
    ap: int


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Linear features ``phi(s, a) = matrix[s * n_actions + a]``.

    ``indicator`` uses the identity; ``full_rank_matrix`` a square nonsingular
    matrix; ``custom_linear`` any ``(n_cells, p)`` matrix, checked for whether
    the constant function lies in its span.
    """

    n_states: int
    n_actions: int
    kind: str = "indicator"
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}; expected one of {_KINDS}")
        n = self.n_states * self.n_actions
        if self.kind == "indicator":
            mat = np.eye(n)
        else:
            if self.matrix is None:
                raise ValueError(f"{self.kind} features need a matrix")
            mat = np.array(self.matrix, dtype=float)
            if mat.ndim != 2 or mat.shape[0] != n:
                raise ValueError(f"feature matrix must have {n} rows, got shape {mat.shape}")
            if self.kind == "full_rank_matrix":
                if mat.shape != (n, n):
                    raise ValueError("full_rank_matrix features must be square")
                if not np.isfinite(np.linalg.cond(mat)) or np.linalg.cond(mat) > 1e12:
                    raise ValueError("full_rank_matrix is singular or ill-conditioned (cond > 1e12)")
            else:
                coef, *_ = np.linalg.lstsq(mat, np.ones(n), rcond=None)
                residual = np.max(np.abs(mat @ coef - 1.0))
                if residual > 1e-6:
                    warnings.warn(f"constant function is not in the feature span "
                                  f"(residual {residual:.2e}); the embedded LP may be loose",
                                  RuntimeWarning, stacklevel=2)
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_cells(self) -> int:
        return self.n_states * self.n_actions

    @classmethod
    def random_full_rank(cls, n_states: int, n_actions: int, seed: int) -> "FeatureMap":
        rng = np.random.default_rng(seed)
        n = n_states * n_actions
        return cls(n_states, n_actions, "full_rank_matrix", rng.normal(size=(n, n)))

    def cell(self, s: int, a: int) -> int:
        if not (0 <= s < self.n_states and 0 <= a < self.n_actions):
            raise IndexError(f"state/action ({s}, {a}) out of range")
        return s * self.n_actions + a


@dataclass(frozen=True, eq=False)
class TauTable:
    """Nonnegative correction ratios ``tau[s, a]`` bounded by ``c_tau``."""

    values: np.ndarray
    c_tau: float = 100.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if np.any(vals < 0):
            raise ValueError("tau entries must be nonnegative")
        if np.any(vals > self.c_tau):
            raise ValueError(f"tau entries must not exceed c_tau = {self.c_tau}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


def phi(fmap: FeatureMap, s: int, a: int) -> np.ndarray:
    return fmap.matrix[fmap.cell(s, a)]


def delta(x: Transition, tau_value: float, fmap: FeatureMap, gamma: float) -> np.ndarray:
    """``(1 - gamma) phi(s0, a0) + tau (gamma phi(s', a') - phi(s, a))``."""
    if tau_value < 0:
        raise ValueError("tau_value must be nonnegative")
    return ((1.0 - gamma) * phi(fmap, x.s0, x.a0)
            + tau_value * (gamma * phi(fmap, x.sp, x.ap) - phi(fmap, x.s, x.a)))


def delta_bar(x: Transition, tau_sa: float, tau_next: float, fmap: FeatureMap) -> np.ndarray:
    """Undiscounted residual ``phi(s', a') (tau(s', a') - tau(s, a))``."""
    return phi(fmap, x.sp, x.ap) * (tau_next - tau_sa)


def bandit_residual(x: Transition, tau_logged: float, fmap: FeatureMap) -> np.ndarray:
    """Bandit residual ``phi(s, a_pi) - phi(s_log, a_log) tau(s_log, a_log)``.

    ``(x.s0, x.a0)`` carries the target-policy draw and ``(x.s, x.a)`` the logged pair.
    """
    return phi(fmap, x.s0, x.a0) - phi(fmap, x.s, x.a) * tau_logged
