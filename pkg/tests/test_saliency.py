"""Tests for saliency terms and pair searches."""

import unittest
import os
import sys
from collections import Counter

import numpy as np
from hypothesis import given, settings, strategies as st

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, os.path.dirname(__file__))

from src.network import ClassJacobian, JacobianLayer
from src.saliency import (
    DomainExhaustedError,
    FeatureTerms,
    PixelPair,
    SaliencyMap,
    all_feature_terms,
    best_pair_constrained,
    best_pair_maximal,
    domain_indices,
    feature_terms,
)
from oracles import brute_force_constrained, brute_force_maximal


def terms(alpha, beta, target=0):
    return FeatureTerms(np.asarray(alpha, dtype=np.float64), np.asarray(beta, dtype=np.float64), target)


def random_instance(seed):
    """Random Jacobian and domain with n <= 12, C <= 4."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 13))
    classes = int(rng.integers(2, 5))
    matrix = rng.normal(size=(classes, n))
    mask = rng.random(n) < 0.8
    mask[rng.choice(n, size=2, replace=False)] = True
    return ClassJacobian(matrix, JacobianLayer.LOGIT), mask, rng


class TestFeatureTerms(unittest.TestCase):
    """Test cases for α/β extraction."""

    def test_alpha_and_beta(self):
        """Test α and β on a small Jacobian."""
        jac = ClassJacobian(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), JacobianLayer.LOGIT)
        t1 = feature_terms(jac, 1)
        np.testing.assert_array_equal(t1.alpha, [3.0, 4.0])
        np.testing.assert_array_equal(t1.beta, [6.0, 8.0])
        self.assertEqual(t1.target, 1)

    def test_all_terms_match_single(self):
        """Test that the all-class terms match per-class feature_terms."""
        jac, _, _ = random_instance(1)
        for t, entry in enumerate(all_feature_terms(jac)):
            single = feature_terms(jac, t)
            np.testing.assert_array_equal(entry.alpha, single.alpha)
            np.testing.assert_array_equal(entry.beta, single.beta)

    def test_class_out_of_range(self):
        """Test rejection of a class outside [0, C)."""
        jac = ClassJacobian(np.zeros((2, 3)), JacobianLayer.LOGIT)
        with self.assertRaises(ValueError):
            feature_terms(jac, 2)

    def test_pixel_pair_is_ordered(self):
        """Test that a pixel pair needs p < q."""
        with self.assertRaises(ValueError):
            PixelPair(3, 1)

    def test_domain_indices_from_mask_and_set(self):
        """Test domains given as a mask or as a set."""
        np.testing.assert_array_equal(domain_indices(np.array([True, False, True])), [0, 2])
        np.testing.assert_array_equal(domain_indices({4, 1, 2}), [1, 2, 4])


class TestConstrainedSearch(unittest.TestCase):
    """Test cases for best_pair_constrained."""

    def test_increasing_example(self):
        """Test the hand-computed S+ example."""
        choice = best_pair_constrained(
            terms([0.5, 0.1, -0.2], [-0.4, -0.1, 0.3]), {0, 1, 2}, SaliencyMap.INCREASING, 1.0
        )
        self.assertEqual(choice.pair, PixelPair(0, 1))
        self.assertAlmostEqual(choice.score, 0.3, places=12)
        self.assertEqual(choice.direction, 1.0)

    def test_no_valid_pair(self):
        """Test that a domain without a positive pair yields None."""
        choice = best_pair_constrained(terms([-1.0, -1.0], [-1.0, -1.0]), {0, 1}, SaliencyMap.INCREASING, 1.0)
        self.assertIsNone(choice)

    def test_small_domain_raises(self):
        """Test DomainExhaustedError for fewer than two indices."""
        for domain in (set(), {0}):
            with self.assertRaises(DomainExhaustedError):
                best_pair_constrained(terms([1.0, 1.0], [-1.0, -1.0]), domain, SaliencyMap.INCREASING, 1.0)

    def test_maps_are_dual(self):
        """Test that S- on (α, β) equals S+ on (-α, -β)."""
        jac, mask, _ = random_instance(9)
        base = feature_terms(jac, 0)
        down = best_pair_constrained(base, mask, SaliencyMap.DECREASING, -1.0)
        up = best_pair_constrained(terms(-base.alpha, -base.beta), mask, SaliencyMap.INCREASING, -1.0)
        self.assertEqual(down, up)

    def test_softmax_like_terms_pick_largest_squared_sum(self):
        """Test that with β = -α the score is A² over pairs with A > 0."""
        alpha = np.array([0.3, -0.1, 0.25, 0.05, -0.4])
        choice = best_pair_constrained(terms(alpha, -alpha), set(range(5)), SaliencyMap.INCREASING, 1.0)
        self.assertEqual(choice.pair, PixelPair(0, 2))
        self.assertEqual(choice.score, (0.3 + 0.25) * (0.3 + 0.25))

    @settings(max_examples=500, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from(list(SaliencyMap)))
    def test_matches_exhaustive_enumeration(self, seed, saliency_map):
        """Test the search against enumerating every pair."""
        jac, mask, rng = random_instance(seed)
        t = int(rng.integers(0, jac.class_count))
        entry = feature_terms(jac, t)
        choice = best_pair_constrained(entry, mask, saliency_map, 1.0)
        pair, gamma = brute_force_constrained(
            entry.alpha, entry.beta, set(np.flatnonzero(mask).tolist()), saliency_map is SaliencyMap.INCREASING
        )
        if pair is None:
            self.assertIsNone(choice)
        else:
            self.assertEqual((choice.pair.p, choice.pair.q), pair)
            self.assertEqual(choice.score, gamma)
            self.assertGreater(choice.score, 0.0)
            self.assertEqual(choice.swept_class, t)


class TestMaximalSearch(unittest.TestCase):
    """Test cases for best_pair_maximal."""

    def test_true_class_winner_steps_against_sign(self):
        """Test θ' = -sign(A)·θ when the winner is the true class."""
        per_class = [terms([0.1, 0.2], [-0.1, -0.2], 0), terms([0.0, 0.0], [0.0, 0.0], 1)]
        choice = best_pair_maximal(per_class, {0, 1}, true_class=0, theta=1.0)
        self.assertEqual(choice.swept_class, 0)
        self.assertEqual(choice.direction, -1.0)

    def test_other_class_winner_steps_with_sign(self):
        """Test θ' = +sign(A)·θ when the winner is another class."""
        per_class = [terms([0.0, 0.0], [0.0, 0.0], 0), terms([-0.1, -0.1], [0.1, 0.1], 1)]
        choice = best_pair_maximal(per_class, {0, 1}, true_class=0, theta=0.1)
        self.assertEqual(choice.swept_class, 1)
        self.assertEqual(choice.direction, -0.1)

    def test_all_zero_scores(self):
        """Test that all-zero scores give no pair."""
        per_class = [terms([0.0, 0.0, 0.0], [0.0, 0.0, 0.0], t) for t in range(2)]
        self.assertIsNone(best_pair_maximal(per_class, {0, 1, 2}, 0, 1.0))

    def test_counts_pair_class_combinations(self):
        """Test that the counter records the scored and the computed entries."""
        jac = ClassJacobian(np.random.default_rng(2).normal(size=(3, 6)), JacobianLayer.LOGIT)
        counter = Counter()
        best_pair_maximal(all_feature_terms(jac), set(range(6)), 0, 1.0, counter=counter)
        self.assertEqual(counter["pair_combine"], 3 * 6 * 5 // 2)
        self.assertEqual(counter["pair_sum_entry"], 3 * 6 * 6)

    def test_counter_follows_the_domain(self):
        """Test that a smaller domain scores fewer pairs and counts accumulate."""
        jac = ClassJacobian(np.random.default_rng(4).normal(size=(4, 8)), JacobianLayer.LOGIT)
        counter = Counter()
        best_pair_maximal(all_feature_terms(jac), {0, 2, 5}, 1, 1.0, counter=counter)
        self.assertEqual(counter["pair_combine"], 4 * 3)
        best_pair_maximal(all_feature_terms(jac), {3, 7}, 1, 1.0, counter=counter)
        self.assertEqual(counter["pair_combine"], 4 * 3 + 4)
        self.assertEqual(counter["pair_sum_entry"], 4 * 9 + 4 * 4)

    def test_small_domain_raises(self):
        """Test DomainExhaustedError for fewer than two indices."""
        with self.assertRaises(DomainExhaustedError):
            best_pair_maximal([terms([1.0], [1.0])], {0}, 0, 1.0)

    @settings(max_examples=500, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.1, 0.5, 1.0]))
    def test_matches_exhaustive_enumeration(self, seed, theta):
        """Test the search against enumerating every pair."""
        jac, mask, rng = random_instance(seed)
        y = int(rng.integers(0, jac.class_count))
        per_class = all_feature_terms(jac)
        choice = best_pair_maximal(per_class, mask, y, theta)
        expected = brute_force_maximal(
            [entry.alpha for entry in per_class],
            [entry.beta for entry in per_class],
            set(np.flatnonzero(mask).tolist()),
            y,
            theta,
        )
        if expected is None:
            self.assertIsNone(choice)
        else:
            got = (choice.swept_class, choice.pair.p, choice.pair.q, choice.score, choice.direction)
            self.assertEqual(got, expected)
            self.assertEqual(abs(choice.direction), theta)


if __name__ == '__main__':
    unittest.main()
