import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hcope.divergences import (DivergenceSpec, chi2_quantile_1dof, chi2_weights, divergence_value,
                               kl_gradient_update, kl_weights, moment_projection, project_simplex,
                               reverse_kl_weights, robust_weights)

KINDS = ("modified_kl", "chi_square", "reverse_kl")
scores_st = arrays(np.float64, st.integers(2, 30), elements=st.floats(0, 1, allow_subnormal=False))


def chi2_cdf_oracle(x):
    # One degree of freedom: P(Z^2 <= x) = erf(sqrt(x / 2)).
    return math.erf(math.sqrt(x / 2.0))


def bisect(fun, lo, hi, target, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if fun(mid) < target else (lo, mid)
    return 0.5 * (lo + hi)


class TestSpec:
    @pytest.mark.parametrize("kind", KINDS)
    def test_normalization(self, kind):
        f = DivergenceSpec(kind).f
        assert f(1.0) == pytest.approx(0.0, abs=1e-14)

    def test_unknown(self):
        with pytest.raises(ValueError):
            DivergenceSpec("hellinger")

    def test_reverse_kl_flagged(self):
        assert not DivergenceSpec("reverse_kl").has_coverage_guarantee
        assert DivergenceSpec("modified_kl").has_coverage_guarantee

    @pytest.mark.parametrize("kind", KINDS)
    def test_conjugate_is_fenchel(self, kind):
        spec = DivergenceSpec(kind)
        xs = np.linspace(1e-6, 20, 200001)
        for y in (-1.5, -0.3, 0.0, 0.4, 1.2):
            brute = np.max(y * xs - spec.f(xs))
            assert spec.conjugate(y) == pytest.approx(brute, abs=1e-6)


class TestDivergenceValue:
    def test_uniform_zero(self):
        for kind in KINDS:
            assert divergence_value(kind, np.full(5, 0.2)) == pytest.approx(0.0, abs=1e-15)

    def test_hand_values(self):
        assert divergence_value("modified_kl", [1.0, 0.0]) == pytest.approx(2 * math.log(2), abs=1e-14)
        assert divergence_value("chi_square", [1.0, 0.0]) == pytest.approx(1.0, abs=1e-14)

    def test_negative_weights(self):
        with pytest.raises(ValueError):
            divergence_value("chi_square", [1.5, -0.5])


class TestKlWeights:
    def test_constant_scores(self):
        wv = kl_weights(np.full(4, 3.0), 2.0)
        np.testing.assert_allclose(wv.w, 0.25)
        assert wv.achieved_divergence == 0.0

    def test_zero_radius(self):
        np.testing.assert_allclose(kl_weights(np.arange(5.0), 0.0).w, 0.2)

    def test_boundary_active(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            z = rng.random(40)
            wv = kl_weights(z, 2.7, "max")
            assert wv.w.sum() == pytest.approx(1.0, abs=1e-9)
            assert abs(divergence_value("modified_kl", wv.w) - 2.7 / 40) < 1e-7

    def test_grid_search_two_points(self):
        xi, z = 0.1, np.array([0.0, 1.0])
        grid = np.linspace(0, 1, 10_001)
        feasible = [p for p in grid if divergence_value("modified_kl", [1 - p, p]) <= xi / 2]
        best = max(feasible)
        wv = kl_weights(z, xi, "max")
        assert wv.w[1] == pytest.approx(best, abs=1e-4)

    def test_slack_constraint_goes_to_argmax(self):
        # Putting all mass on the two top scores costs 2 log 2 < xi / n.
        wv = kl_weights(np.array([0.0, 1.0, 1.0, 0.5]), 20.0)
        np.testing.assert_allclose(wv.w, [0, 0.5, 0.5, 0])
        assert wv.lam == 0.0

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            kl_weights(np.array([0.0, np.nan]), 1.0)
        with pytest.raises(ValueError):
            kl_weights(np.array([0.0, 1.0]), -1.0)


class TestChi2Weights:
    def test_constant(self):
        np.testing.assert_allclose(chi2_weights(np.ones(3), 1.0).w, 1 / 3)

    def test_lemma_closed_form(self):
        rng = np.random.default_rng(1)
        xi, n, M = 3.841459, 200, 1.0
        checked = 0
        for _ in range(100):
            z = rng.random(n) * M
            s2 = z.var()
            if s2 < xi * M**2 / n:
                continue
            checked += 1
            value = chi2_weights(z, xi).w @ z
            assert value == pytest.approx(z.mean() + math.sqrt(xi * s2 / n), abs=1e-6)
        assert checked == 100

    @pytest.mark.parametrize("seed", range(5))
    def test_convex_solver_oracle(self, seed):
        cp = pytest.importorskip("cvxpy")
        rng = np.random.default_rng(seed)
        z = np.array([0.0, 0.0, 1.0]) if seed == 0 else rng.random(6) ** 3
        n, xi = z.size, 0.5 + seed
        w = cp.Variable(n)
        prob = cp.Problem(cp.Maximize(z @ w), [w >= 0, cp.sum(w) == 1, n * cp.sum_squares(w - 1 / n) <= xi / n])
        prob.solve(solver="CLARABEL")
        ours = chi2_weights(z, xi)
        assert ours.w @ z == pytest.approx(prob.value, abs=1e-6)
        np.testing.assert_allclose(ours.w, w.value, atol=1e-4)

    def test_sandwich(self):
        rng = np.random.default_rng(2)
        M, xi = 1.0, 2.7
        for n in (5, 20, 80):
            for _ in range(20):
                z = rng.random(n) ** rng.uniform(0.2, 4)
                gap = chi2_weights(z, xi).w @ z - z.mean()
                root = math.sqrt(xi * z.var() / n)
                assert max(root - M * xi / n, 0.0) - 1e-9 <= gap <= root + 1e-9


class TestReverseKl:
    def test_boundary(self):
        z = np.random.default_rng(3).random(30)
        wv = reverse_kl_weights(z, 2.0)
        assert divergence_value("reverse_kl", wv.w) == pytest.approx(2.0 / 30, abs=1e-7)
        assert wv.w.sum() == pytest.approx(1.0, abs=1e-9)


class TestProperties:
    @given(scores_st, st.floats(0.01, 10), st.sampled_from(KINDS))
    @settings(max_examples=60, deadline=None)
    def test_weight_validity(self, z, xi, kind):
        wv = robust_weights(kind, z, xi, "max")
        assert abs(wv.w.sum() - 1) < 1e-9
        assert np.all(wv.w >= 0)
        assert divergence_value(kind, wv.w) <= xi / z.size + 1e-7

    @given(scores_st, st.floats(0.01, 10), st.sampled_from(KINDS))
    @settings(max_examples=60, deadline=None)
    def test_negation_duality(self, z, xi, kind):
        np.testing.assert_array_equal(robust_weights(kind, z, xi, "min").w,
                                      robust_weights(kind, -z, xi, "max").w)

    @given(scores_st, st.sampled_from(KINDS))
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_radius(self, z, kind):
        small, big = (robust_weights(kind, z, xi, "max").w @ z for xi in (0.5, 3.0))
        lo_small, lo_big = (robust_weights(kind, z, xi, "min").w @ z for xi in (0.5, 3.0))
        assert big >= small - 1e-9 and lo_big <= lo_small + 1e-9

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-5, 5)))
    @settings(max_examples=60, deadline=None)
    def test_simplex_projection(self, v):
        p = project_simplex(v)
        assert p.sum() == pytest.approx(1.0, abs=1e-12) and np.all(p >= 0)
        # Projection optimality: <v - p, q - p> <= 0 for the simplex vertices q.
        for q in np.eye(v.size):
            assert (v - p) @ (q - p) <= 1e-9


def test_gradient_update_stays_feasible():
    rng = np.random.default_rng(4)
    z, xi, n = rng.random(25), 2.0, 25
    w, lam = np.full(n, 1 / n), 1.0
    for _ in range(30):
        wv, lam = kl_gradient_update(w, z, lam, 1.0, xi)
        w = wv.w
        assert w.sum() == pytest.approx(1.0, abs=1e-9)
        assert divergence_value("modified_kl", w) <= xi / n + 1e-7
    assert w @ z > z.mean()


@pytest.mark.parametrize("kind", KINDS)
def test_moment_projection(kind):
    g = np.array([-1.0, 0.5, 2.0, -0.3])
    wv = moment_projection(kind, g)
    assert wv.w @ g == pytest.approx(0.0, abs=1e-9)
    assert moment_projection(kind, np.array([1.0, 2.0])) is None


class TestQuantile:
    @pytest.mark.parametrize("conf, expected", [(0.95, 3.841459), (0.90, 2.705543)])
    def test_pinned(self, conf, expected):
        assert chi2_quantile_1dof(conf) == pytest.approx(expected, abs=1e-5)

    @pytest.mark.parametrize("conf", [0.5, 0.68, 0.9, 0.95, 0.99])
    def test_against_erf_inversion(self, conf):
        assert chi2_quantile_1dof(conf) == pytest.approx(bisect(chi2_cdf_oracle, 0, 50, conf), abs=1e-9)

    def test_small_confidence(self):
        assert chi2_quantile_1dof(1e-12) < 1e-20

    def test_range(self):
        with pytest.raises(ValueError):
            chi2_quantile_1dof(1.0)
