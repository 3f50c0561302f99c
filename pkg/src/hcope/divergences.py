"""f-divergences and optimal reweightings over the empirical divergence ball.

The ball is ``K_f = {w in simplex : D_f(w || uniform) <= xi / n}`` with
``D_f(w || uniform) = (1/n) sum_i f(n w_i)``.  Every ``f`` here is normalized so
that ``f(1) = f'(1) = 0`` and ``f''(1) = 2``; with that normalization the same
``xi`` (a chi-square(1) quantile) gives the same asymptotic coverage for every
divergence.  For the modified KL divergence ``D_f = 2 KL``, so its ball is
``KL(w || uniform) <= xi / (2n)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, special

__all__ = [
    "DivergenceSpec", "WeightVector", "divergence_value", "project_simplex",
    "kl_weights", "chi2_weights", "reverse_kl_weights", "robust_weights",
    "kl_gradient_update", "moment_projection", "chi2_quantile_1dof",
]

KINDS = ("modified_kl", "chi_square", "reverse_kl")


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def _f_modified_kl(x):
    return 2.0 * _xlogx(x) - 2.0 * (np.asarray(x, dtype=float) - 1.0)


def _f_chi_square(x):
    return (np.asarray(x, dtype=float) - 1.0) ** 2


def _f_reverse_kl(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x > 0, 2.0 * (x - 1.0 - np.log(np.where(x > 0, x, 1.0))), np.inf)


def _fp_modified_kl(x):
    with np.errstate(divide="ignore"):
        return 2.0 * np.log(x)


def _fp_chi_square(x):
    return 2.0 * (np.asarray(x, dtype=float) - 1.0)


def _fp_reverse_kl(x):
    return 2.0 * (1.0 - 1.0 / np.asarray(x, dtype=float))


def _conj_modified_kl(y):
    return 2.0 * np.expm1(np.asarray(y, dtype=float) / 2.0)


def _conj_chi_square(y):
    y = np.asarray(y, dtype=float)
    return np.where(y >= -2.0, y + y * y / 4.0, -1.0)


def _conj_reverse_kl(y):
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(y < 2.0, -2.0 * np.log1p(-np.minimum(y, 2.0) / 2.0), np.inf)


_TABLE = {
    "modified_kl": (_f_modified_kl, _fp_modified_kl, _conj_modified_kl),
    "chi_square": (_f_chi_square, _fp_chi_square, _conj_chi_square),
    "reverse_kl": (_f_reverse_kl, _fp_reverse_kl, _conj_reverse_kl),
}


@dataclass(frozen=True)
class DivergenceSpec:
    """One of the three supported divergences with ``f``, ``f'`` and ``f*``.

    ``reverse_kl`` is the lifted form ``2 (x - 1 - log x)``; it is offered for
    completeness and carries no asymptotic coverage guarantee.
    """

    kind: str = "modified_kl"

    def __post_init__(self):
        if self.kind not in _TABLE:
            raise ValueError(f"unknown divergence {self.kind!r}; expected one of {KINDS}")
        h = 1e-4
        f = self.f
        second = (f(1 + h) - 2 * f(1.0) + f(1 - h)) / h**2
        first = (f(1 + h) - f(1 - h)) / (2 * h)
        if abs(f(1.0)) > 1e-12 or abs(first) > 1e-6 or abs(second - 2.0) > 1e-6:
            raise AssertionError(f"{self.kind}: normalization f(1)=f'(1)=0, f''(1)=2 violated")

    @property
    def f(self) -> Callable:
        return _TABLE[self.kind][0]

    @property
    def f_prime(self) -> Callable:
        return _TABLE[self.kind][1]

    @property
    def conjugate(self) -> Callable:
        return _TABLE[self.kind][2]

    @property
    def has_coverage_guarantee(self) -> bool:
        return self.kind != "reverse_kl"

    def weights(self, scores, xi: float, direction: str = "max") -> "WeightVector":
        return robust_weights(self.kind, scores, xi, direction)


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Weights on the simplex plus the multipliers that produced them.

    ``lam`` is the temperature of the reweighting (``inf`` for uniform weights,
    ``0`` when the divergence constraint is slack and mass sits on the extreme
    scores); ``eta`` is the normalizer where the closed form has one.
    """

    w: np.ndarray
    achieved_divergence: float
    lam: float = np.inf
    eta: float = 0.0

    def expectation(self, values) -> float:
        return float(self.w @ np.asarray(values, dtype=float))


def divergence_value(spec, w) -> float:
    """``(1/n) sum_i f(n w_i)``: the divergence of ``w`` from the uniform weights."""
    kind = spec.kind if isinstance(spec, DivergenceSpec) else str(spec)
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    n = w.size
    return float(np.mean(_TABLE[kind][0](n * w)))


def _check_inputs(scores, xi, direction):
    z = np.asarray(scores, dtype=float)
    if z.ndim != 1 or z.size < 2:
        raise ValueError("scores must be a vector with at least 2 entries")
    if not np.all(np.isfinite(z)):
        raise ValueError("scores must be finite")
    if not xi >= 0:
        raise ValueError(f"xi must be nonnegative, got {xi}")
    if direction not in ("max", "min"):
        raise ValueError("direction must be 'max' or 'min'")
    return z if direction == "max" else -z


def _uniform(n, lam=np.inf):
    return WeightVector(np.full(n, 1.0 / n), 0.0, lam, 0.0)


def _argmax_uniform(z, kind):
    top = z == z.max()
    w = top / top.sum()
    return w, divergence_value(kind, w)


def _log_bisect(fun, lo, hi, iters=200, rtol=1e-15):
    """Root of a decreasing function on ``[lo, hi]`` by bisection in log space.

    Expands the bracket geometrically until ``fun(lo) > 0 > fun(hi)``.
    """
    for _ in range(200):
        if fun(lo) > 0:
            break
        lo /= 10.0
    for _ in range(200):
        if fun(hi) < 0:
            break
        hi *= 10.0
    a, b = np.log(lo), np.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if fun(np.exp(mid)) > 0:
            a = mid
        else:
            b = mid
        if b - a < rtol:
            break
    return float(np.exp(0.5 * (a + b)))


def _kl_at(z, lam):
    logits = (z - z.max()) / lam
    log_norm = special.logsumexp(logits)
    logw = logits - log_norm
    w = np.exp(logw)
    div = 2.0 * float(w @ (logw + np.log(z.size)))
    return w, max(div, 0.0), float(lam * log_norm + z.max())


def kl_weights(scores, xi: float, direction: str = "max") -> WeightVector:
    """Extreme weights for the modified-KL ball: ``w_i ∝ exp(z_i / lam)``.

    ``lam`` solves ``D_f(w_lam) = xi / n`` by bisection on ``log lam``.  When the
    ball contains the uniform distribution over the extreme scores the
    constraint is slack and that distribution is returned with ``lam = 0``.
    """
    z = _check_inputs(scores, xi, direction)
    n = z.size
    spread = z.max() - z.min()
    if xi == 0 or spread == 0:
        return _uniform(n)
    target = xi / n
    w_top, div_top = _argmax_uniform(z, "modified_kl")
    if target >= div_top:
        return WeightVector(w_top, div_top, 0.0, float(z.max()))
    lam = _log_bisect(lambda t: _kl_at(z, t)[1] - target, 1e-10 * spread, 1e6 * spread)
    w, div, eta = _kl_at(z, lam)
    return WeightVector(w, div, lam, eta)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex by sorted thresholding.

    Sorting is stable (by value, then index) so tied entries are handled
    deterministically.
    """
    v = np.asarray(v, dtype=float)
    # Shift-invariant; centering on the max keeps u - 1 representable for huge inputs.
    v = v - v.max()
    order = np.argsort(-v, kind="stable")
    u = v[order]
    css = np.cumsum(u)
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u * k > css - 1.0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _chi2_at(z, t):
    n = z.size
    w = project_simplex(np.full(n, 1.0 / n) + t * (z - z.mean()))
    return w, n * float(np.sum((w - 1.0 / n) ** 2))


def _chi2_refine(z, t, target):
    """Exact root of the piecewise-quadratic divergence on the support found at ``t``."""
    n = z.size
    w, _ = _chi2_at(z, t)
    S = w > 0
    zc = z - z.mean()
    k = S.sum()
    # On a fixed support, w_S = 1/n + t*zc_S - (k/n + t*sum(zc_S) - 1)/k.
    a = np.where(S, 1.0 / n - (k / n - 1.0) / k, 0.0) - 1.0 / n
    b = np.where(S, zc - zc[S].sum() / k, 0.0)
    qa, qb, qc = b @ b, 2 * a @ b, a @ a - target / n
    disc = qb * qb - 4 * qa * qc
    if qa <= 0 or disc < 0:
        return None
    t_exact = (-qb + np.sqrt(disc)) / (2 * qa)
    w_exact = a + t_exact * b + 1.0 / n
    w_exact = np.where(S, w_exact, 0.0)
    if np.any(w_exact < -1e-15) or abs(t_exact - t) > 1e-6 * max(t, 1e-300) + 1e-12:
        return None
    w_exact = np.maximum(w_exact, 0.0)
    return w_exact / w_exact.sum()


def chi2_weights(scores, xi: float, direction: str = "max") -> WeightVector:
    """Extreme weights for the chi-square ball ``n ||w - 1/n||^2 <= xi / n``.

    For a scale ``t`` the candidate is the simplex projection of
    ``1/n + t (z - mean z)``; ``t`` is raised until the constraint is active.
    ``lam`` is reported as ``1 / (2 n t)``, the multiplier of the divergence
    constraint.
    """
    z = _check_inputs(scores, xi, direction)
    n = z.size
    zc = z - z.mean()
    norm = np.linalg.norm(zc)
    if xi == 0 or norm == 0:
        return _uniform(n)
    target = xi / n
    w_top, div_top = _argmax_uniform(z, "chi_square")
    if target >= div_top:
        return WeightVector(w_top, div_top, 0.0, 0.0)
    t0 = np.sqrt(xi) / (n * norm)
    w, div = _chi2_at(z, t0)
    if np.all(w > 0):
        # Interior solution: the projection is inactive.
        w = np.full(n, 1.0 / n) + t0 * zc
        t = t0
    else:
        t = _log_bisect(lambda s: target - _chi2_at(z, s)[1], t0, 10 * t0)
        refined = _chi2_refine(z, t, target)
        w = refined if refined is not None else _chi2_at(z, t)[0]
    div = n * float(np.sum((w - 1.0 / n) ** 2))
    return WeightVector(w, div, 1.0 / (2 * n * t), 0.0)


def _rkl_at(z, gap):
    inv = 1.0 / (z.max() + gap - z)
    w = inv / inv.sum()
    n = z.size
    return w, float(-2.0 * np.mean(np.log(n * w)))


def reverse_kl_weights(scores, xi: float, direction: str = "max") -> WeightVector:
    """Extreme weights for the lifted reverse-KL ball: ``w_i ∝ 1 / (eta - z_i)``."""
    z = _check_inputs(scores, xi, direction)
    n = z.size
    spread = z.max() - z.min()
    if xi == 0 or spread == 0:
        return _uniform(n)
    target = xi / n
    gap = _log_bisect(lambda g: _rkl_at(z, g)[1] - target, 1e-12 * spread, 1e6 * spread)
    w, div = _rkl_at(z, gap)
    eta = float(z.max() + gap)
    return WeightVector(w, div, float(1.0 / np.sum(1.0 / (eta - z))), eta)


_SOLVERS = {"modified_kl": kl_weights, "chi_square": chi2_weights, "reverse_kl": reverse_kl_weights}


def robust_weights(kind, scores, xi: float, direction: str = "max") -> WeightVector:
    """Dispatch to the closed-form solver of divergence ``kind``."""
    kind = kind.kind if isinstance(kind, DivergenceSpec) else kind
    try:
        solver = _SOLVERS[kind]
    except KeyError:
        raise ValueError(f"unknown divergence {kind!r}") from None
    return solver(scores, xi, direction)


def _shrink_into_ball(w, kind, target):
    """Pull ``w`` toward uniform until ``D_f <= target`` (the divergence is convex along the segment)."""
    n = w.size
    u = np.full(n, 1.0 / n)
    if divergence_value(kind, w) <= target:
        return w
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if divergence_value(kind, u + mid * (w - u)) <= target:
            lo = mid
        else:
            hi = mid
    return u + lo * (w - u)


def kl_gradient_update(w, scores, lam: float, step: float, xi: float,
                       direction: str = "max"):
    """One multiplicative (mirror) step on ``(w, lam)`` for the modified-KL ball.

    ``w~_j = exp(step * z_j) * w_j^(1 - step*lam) * (1/n)^(step*lam)``, then
    normalize; ``lam`` takes a projected gradient step on the constraint
    violation.  The result is pulled back into the ball so every iterate is
    feasible.  Returns ``(WeightVector, lam)``.
    """
    z = _check_inputs(scores, xi, direction)
    w = np.asarray(w, dtype=float)
    n = w.size
    a = step * lam
    with np.errstate(divide="ignore"):
        logw = step * (z - z.max()) + (1.0 - a) * np.log(w) + a * np.log(1.0 / n)
    logw -= special.logsumexp(logw)
    w_new = np.exp(logw)
    target = xi / n
    div = divergence_value("modified_kl", w_new)
    lam_new = max(0.0, lam + step * (div - target))
    w_new = _shrink_into_ball(w_new, "modified_kl", target)
    return WeightVector(w_new, divergence_value("modified_kl", w_new), lam_new, 0.0), lam_new


def moment_projection(kind, g):
    """Weights of minimum divergence from uniform subject to ``sum_i w_i g_i = 0``.

    Returns ``None`` when no simplex point satisfies the moment (all ``g`` of
    one strict sign).
    """
    kind = kind.kind if isinstance(kind, DivergenceSpec) else kind
    g = np.asarray(g, dtype=float)
    n = g.size
    if np.all(g == 0):
        return _uniform(n)
    if g.max() <= 0 or g.min() >= 0:
        if g.max() == 0 or g.min() == 0:
            w = (g == 0) / np.count_nonzero(g == 0)
            return WeightVector(w, divergence_value(kind, w))
        return None
    scale = np.max(np.abs(g))

    if kind == "modified_kl":
        def weights(mu):
            logits = -mu * g / scale
            return np.exp(logits - special.logsumexp(logits))
    elif kind == "chi_square":
        def weights(mu):
            return project_simplex(np.full(n, 1.0 / n) - mu * g / (scale * n))
    elif kind == "reverse_kl":
        # Empirical-likelihood form w_i = 1 / (n (1 + mu g_i)) on the admissible interval.
        lo_mu = -1.0 / g.max() * (1 - 1e-12)
        hi_mu = -1.0 / g.min() * (1 - 1e-12)
        mu = optimize.brentq(lambda m: np.sum(g / (1.0 + m * g)), lo_mu, hi_mu, xtol=1e-15, maxiter=500)
        w = 1.0 / (n * (1.0 + mu * g))
        w /= w.sum()
        return WeightVector(w, divergence_value(kind, w), np.inf, float(mu))
    else:
        raise ValueError(f"unknown divergence {kind!r}")

    def moment(mu):
        return float(weights(mu) @ g)

    hi = 1.0
    while moment(hi) > 0:
        hi *= 2.0
    lo = -1.0
    while moment(lo) < 0:
        lo *= 2.0
    mu = optimize.brentq(moment, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    w = weights(mu)
    return WeightVector(w, divergence_value(kind, w), np.inf, float(mu))


def chi2_quantile_1dof(confidence: float) -> float:
    """``xi`` with ``P(chi2_1 <= xi) = confidence``.

    Inverts the regularized lower incomplete gamma function ``P(1/2, xi/2)``
    with Brent's method to an absolute tolerance of 1e-12.
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")

    def cdf_gap(x):
        return special.gammainc(0.5, x / 2.0) - confidence

    hi = 1.0
    while cdf_gap(hi) < 0:
        hi *= 2.0
    return float(optimize.brentq(cdf_gap, 0.0, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=500))
