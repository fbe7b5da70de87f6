import numpy as np
import pytest

from conftest import brute_force_matchings, brute_force_max_weight, random_market, random_zero_sum_outcome
from smbandits.errors import InvalidOutcome, NoAlternative
from smbandits.market import (
    Matching,
    MarketOutcome,
    UtilityMatrix,
    is_stable_ntu,
    is_stable_tu,
    max_weight_matching_with_duals,
    second_best_matching,
    stability_inequalities_hold,
    stable_outcome_from_duals,
)


class TestMatchingType:
    def test_rejects_duplicate_agents(self):
        with pytest.raises(ValueError):
            Matching([(0, 0), (0, 1)])
        with pytest.raises(ValueError):
            Matching([(0, 0), (1, 0)])

    def test_normalizes_order(self):
        assert Matching([(1, 0), (0, 1)]).pairs == ((0, 1), (1, 0))


class TestMaxWeightMatching:
    def test_fig1_scaled(self, fig1_market):
        u = fig1_market.scaled(1.0 / 12.0)
        match, duals = max_weight_matching_with_duals(u)
        assert match.pairs == ((0, 0),)
        assert match.total_utility(u) == pytest.approx(4.0 / 12.0, abs=1e-12)
        assert duals.total() == pytest.approx(4.0 / 12.0, abs=1e-12)

    def test_negative_pair_stays_unmatched(self):
        u = UtilityMatrix(np.array([[0.3]]), np.array([[-0.5]]))
        match, duals = max_weight_matching_with_duals(u)
        assert match.pairs == ()
        assert duals.total() == 0.0

    def test_empty_market(self):
        u = UtilityMatrix(np.zeros((0, 3)), np.zeros((3, 0)))
        match, duals = max_weight_matching_with_duals(u)
        assert match.pairs == ()
        assert duals.providers.shape == (3,)

    def test_random_4x4_matches_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            u = random_market(rng, 4, 4)
            match, duals = max_weight_matching_with_duals(u)
            best = brute_force_max_weight(u.joint())
            assert match.total_utility(u) == pytest.approx(best, abs=1e-9)
            assert duals.total() == pytest.approx(best, abs=1e-9)

    def test_dual_feasibility_and_slackness(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            n_c, n_p = rng.integers(1, 6, 2)
            u = random_market(rng, int(n_c), int(n_p))
            match, duals = max_weight_matching_with_duals(u)
            joint = u.joint()
            slack = duals.customers[:, None] + duals.providers[None, :] - joint
            assert slack.min() > -1e-9
            assert duals.customers.min() >= 0.0 and duals.providers.min() >= 0.0
            for i, j in match.pairs:
                assert slack[i, j] == pytest.approx(0.0, abs=1e-9)

    def test_price_reconstruction_is_stable(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            n_c, n_p = rng.integers(1, 5, 2)
            u = random_market(rng, int(n_c), int(n_p))
            match, duals = max_weight_matching_with_duals(u)
            outcome = stable_outcome_from_duals(u, match, duals)
            assert is_stable_tu(u, outcome, 0.0)


class TestSecondBest:
    def test_fig1_gap(self, fig1_market):
        u = fig1_market.scaled(1.0 / 12.0)
        best, _ = max_weight_matching_with_duals(u)
        second, weight = second_best_matching(u, best)
        assert second.pairs == ((0, 1),)
        assert weight == pytest.approx(2.0 / 12.0, abs=1e-12)
        assert best.total_utility(u) - weight == pytest.approx(2.0 / 12.0, abs=1e-12)

    def test_single_positive_pair(self):
        u = UtilityMatrix(np.array([[0.6]]), np.array([[0.2]]))
        best, _ = max_weight_matching_with_duals(u)
        second, weight = second_best_matching(u, best)
        assert second.pairs == ()
        assert weight == pytest.approx(0.0)

    def test_no_agents_signals(self):
        u = UtilityMatrix(np.zeros((0, 0)), np.zeros((0, 0)))
        with pytest.raises(NoAlternative):
            second_best_matching(u, Matching())

    def test_random_4x4_agrees_with_enumeration(self):
        rng = np.random.default_rng(10)
        for _ in range(40):
            u = random_market(rng, 4, 4)
            best, _ = max_weight_matching_with_duals(u)
            second, weight = second_best_matching(u, best)
            best_set = frozenset(best.pairs)
            expected = max(
                sum(u.joint()[i, j] for i, j in m)
                for m in brute_force_matchings(4, 4)
                if frozenset(m) != best_set
            )
            assert weight == pytest.approx(expected, abs=1e-9)
            assert frozenset(second.pairs) != best_set
            assert weight <= best.total_utility(u) + 1e-12


class TestStabilityTU:
    def test_fig1_good_outcome(self, fig1_market):
        outcome = MarketOutcome(Matching([(0, 0)]), np.array([-6.0]), np.array([6.0, 0.0]))
        assert is_stable_tu(fig1_market, outcome, 0.0)

    def test_fig1_bad_outcome(self, fig1_market, fig1_bad_outcome):
        assert not is_stable_tu(fig1_market, fig1_bad_outcome, 0.0)

    def test_empty_market(self):
        u = UtilityMatrix(np.zeros((0, 0)), np.zeros((0, 0)))
        outcome = MarketOutcome(Matching(), np.zeros(0), np.zeros(0))
        assert is_stable_tu(u, outcome, 0.0)

    def test_non_zero_sum_rejected(self, fig1_market):
        outcome = MarketOutcome(Matching([(0, 0)]), np.array([-6.0]), np.array([5.0, 0.0]))
        with pytest.raises(InvalidOutcome):
            is_stable_tu(fig1_market, outcome, 0.0)

    def test_eps_relaxation(self, fig1_market):
        # Customer overpays by 0.5: IR is violated by 0.5 and the idle
        # expensive provider blocks with gain 2.5, so stability needs
        # eps >= 1.25 (blocking slack is 2*eps).
        outcome = MarketOutcome(Matching([(0, 0)]), np.array([-9.5]), np.array([9.5, 0.0]))
        assert not is_stable_tu(fig1_market, outcome, 0.0)
        assert not is_stable_tu(fig1_market, outcome, 1.0)
        assert is_stable_tu(fig1_market, outcome, 1.25)

    def test_inequalities_ignore_zero_sum(self, fig1_market):
        outcome = MarketOutcome(Matching([(0, 0)]), np.array([-5.0]), np.array([6.0, 0.0]))
        assert stability_inequalities_hold(fig1_market, outcome, 0.0)

    def test_stable_implies_max_weight(self):
        rng = np.random.default_rng(11)
        checked = 0
        for _ in range(300):
            n_c, n_p = rng.integers(1, 5, 2)
            u = random_market(rng, int(n_c), int(n_p))
            outcome = random_zero_sum_outcome(rng, u)
            if is_stable_tu(u, outcome, 0.0):
                best = brute_force_max_weight(u.joint())
                assert outcome.matching.total_utility(u) == pytest.approx(best, abs=1e-9)
                checked += 1
        assert checked > 0


class TestStabilityNTU:
    def test_unique_stable_matching(self):
        u = UtilityMatrix(np.array([[0.1, 0.2]]), np.array([[1.0], [0.5]]))
        assert is_stable_ntu(u, Matching([(0, 1)]))
        assert not is_stable_ntu(u, Matching([(0, 0)]))

    def test_empty_matching_when_all_negative(self):
        u = UtilityMatrix(np.array([[-0.5, -0.2]]), np.array([[-0.1], [-0.9]]))
        assert is_stable_ntu(u, Matching())
