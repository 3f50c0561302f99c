import itertools

import numpy as np
import pytest

from hcope.envs import collect_dataset
from hcope.features import (FeatureMap, TauTable, Transition, bandit_residual, delta, delta_bar, phi)
from hcope.mdp import exact_occupancy, random_mdp, random_policy


class TestFeatureMap:
    def test_indicator_one_hot(self):
        fmap = FeatureMap(3, 2)
        np.testing.assert_array_equal(phi(fmap, 1, 0), np.eye(6)[2])

    def test_identity_full_rank_matches_indicator(self):
        full = FeatureMap(3, 2, "full_rank_matrix", np.eye(6))
        np.testing.assert_array_equal(full.matrix, FeatureMap(3, 2).matrix)

    def test_random_full_rank_row_lookup(self):
        fmap = FeatureMap.random_full_rank(3, 2, seed=4)
        np.testing.assert_array_equal(phi(fmap, 2, 1), fmap.matrix[5])

    def test_singular_rejected(self):
        with pytest.raises(ValueError):
            FeatureMap(1, 2, "full_rank_matrix", np.ones((2, 2)))

    def test_custom_without_constant_warns(self):
        with pytest.warns(RuntimeWarning, match="constant"):
            FeatureMap(2, 2, "custom_linear", np.array([[1.0], [0.0], [0.0], [0.0]]))

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            phi(FeatureMap(2, 2), 2, 0)

    def test_tau_cap(self):
        with pytest.raises(ValueError):
            TauTable(np.array([[101.0]]))
        with pytest.raises(ValueError):
            TauTable(np.array([[-1.0]]))


class TestDelta:
    x = Transition(s0=0, a0=0, s=1, a=0, r=0.5, sp=2, ap=1)

    def test_zero_tau(self):
        fmap = FeatureMap(3, 2)
        np.testing.assert_allclose(delta(self.x, 0.0, fmap, 0.9), 0.1 * np.eye(6)[0])

    def test_hand_values(self):
        out = delta(self.x, 2.0, FeatureMap(3, 2), 0.9)
        expected = np.zeros(6)
        expected[0], expected[5], expected[2] = 0.1, 1.8, -2.0
        np.testing.assert_allclose(out, expected, atol=1e-15)

    def test_affine_in_tau(self):
        # Integer features and gamma = 0.5 keep every product exact in binary.
        mat = np.random.default_rng(0).integers(-3, 4, size=(6, 6)) + 8 * np.eye(6)
        fmap = FeatureMap(3, 2, "full_rank_matrix", mat)
        d0, d1, d2 = (delta(self.x, t, fmap, 0.5) for t in (0.0, 1.5, 3.0))
        np.testing.assert_array_equal(d2 - d1, d1 - d0)

    def test_undiscounted_and_bandit_forms(self):
        fmap = FeatureMap(3, 2)
        np.testing.assert_allclose(delta_bar(self.x, 1.0, 3.0, fmap), 2.0 * np.eye(6)[5])
        np.testing.assert_allclose(bandit_residual(self.x, 2.0, fmap), np.eye(6)[0] - 2.0 * np.eye(6)[2])

    def test_negative_tau(self):
        with pytest.raises(ValueError):
            delta(self.x, -1.0, FeatureMap(3, 2), 0.9)


def test_true_corrector_solves_estimating_equation():
    """Sum Delta over the exact law of x: (s, a) ~ d_D, s' ~ T, a' ~ pi, (s0, a0) ~ mu0 x pi."""
    mdp = random_mdp(3, 2, seed=21, gamma=0.9)
    pi = random_policy(3, 2, 22)
    d_data = np.random.default_rng(23).dirichlet(np.ones(6)).reshape(3, 2)
    tau = exact_occupancy(mdp, pi).d / d_data
    fmap = FeatureMap(3, 2)
    total = np.zeros(6)
    S, A = range(3), range(2)
    for s0, a0, s, a, sp, ap in itertools.product(S, A, S, A, S, A):
        p = mdp.mu0[s0] * pi.probs[s0, a0] * d_data[s, a] * mdp.transition[s, a, sp] * pi.probs[sp, ap]
        if p:
            total += p * delta(Transition(s0, a0, s, a, 0.0, sp, ap), tau[s, a], fmap, mdp.gamma)
    assert np.max(np.abs(total)) < 1e-8
