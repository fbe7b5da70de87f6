import json
import math

import numpy as np
import pytest

from smbandits.confidence import (
    ConfidenceConfig,
    LinearConfidence,
    Mode,
    TypedConfidence,
    UnstructuredConfidence,
    init_confidence,
)
from smbandits.errors import InvalidContext, ProtocolViolation
from smbandits.market import Matching, UtilityMatrix, customer, provider


def obs_for(matching: Matching, value: float) -> dict:
    out = {}
    for i, j in matching.pairs:
        out[customer(i)] = value
        out[provider(j)] = value
    return out


class TestInit:
    def test_fresh_widths_are_two(self):
        conf = init_confidence(Mode.UNSTRUCTURED, 3, 4)
        assert conf.width(customer(0), provider(3)) == 2.0
        assert conf.width_sum(Matching([(0, 0), (1, 1)])) == 8.0

    def test_typed_has_one_interval_per_type_pair(self):
        conf = init_confidence(
            Mode.TYPED, 5, 5,
            customer_types=np.array([0, 1, 2, 0, 1]),
            provider_types=np.array([2, 1, 0, 2, 1]),
            num_types=3,
        )
        assert conf.type_lo.shape == (3, 3)
        assert (conf.type_hi - conf.type_lo == 2.0).all()

    def test_linear_starts_with_no_observations(self):
        ctx = np.eye(2)
        conf = init_confidence(Mode.LINEAR, 2, 2, customer_contexts=ctx, provider_contexts=ctx)
        assert (conf.pulls == 0).all()
        assert conf.width(customer(0), provider(1)) == 2.0

    def test_context_outside_ball_rejected(self):
        bad = np.array([[1.0, 0.5]])
        with pytest.raises(InvalidContext):
            init_confidence(Mode.LINEAR, 1, 1, customer_contexts=bad, provider_contexts=np.array([[1.0, 0.0]]))


class TestUnstructuredUpdate:
    def test_single_observation_saturates(self):
        # |A| = 4, T = 100: the half-width 8 * sqrt(log 400) far exceeds the
        # [-1, 1] range, so one observation leaves the interval untouched.
        conf = UnstructuredConfidence(2, 2)
        m = Matching([(0, 0)])
        conf.update(m, obs_for(m, 0.3), horizon=100)
        assert conf.interval(customer(0), provider(0)) == (-1.0, 1.0)
        assert 8.0 * math.sqrt(math.log(400)) > 2.0

    def test_many_observations_shrink_to_formula(self):
        # 10,000 identical observations of 0.5 with |A| = 4, T = 100: the
        # half-width is 8 * sqrt(log(400) / 10000) = 0.19583... exactly.
        conf = UnstructuredConfidence(2, 2)
        m = Matching([(0, 0)])
        for _ in range(10_000):
            conf.update(m, obs_for(m, 0.5), horizon=100)
        hw = 8.0 * math.sqrt(math.log(400) / 10_000)
        assert hw == pytest.approx(0.1958197465, abs=1e-9)
        lo, hi = conf.interval(customer(0), provider(0))
        assert lo == pytest.approx(0.5 - hw, abs=1e-12)
        assert hi == pytest.approx(0.5 + hw, abs=1e-12)

    def test_mean_outside_range_pins_to_boundary(self):
        conf = UnstructuredConfidence(1, 1, ConfidenceConfig(ucb_scale=0.01))
        m = Matching([(0, 0)])
        for _ in range(50):
            conf.update(m, obs_for(m, 5.0), horizon=10)
        lo, hi = conf.interval(customer(0), provider(0))
        assert lo == hi == 1.0

    def test_nominal_width_monotone(self):
        rng = np.random.default_rng(3)
        conf = UnstructuredConfidence(2, 2, ConfidenceConfig(ucb_scale=1.0))
        m = Matching([(0, 0), (1, 1)])
        last = {pair: 2.0 for pair in m.pairs}
        for _ in range(200):
            obs = {}
            for i, j in m.pairs:
                obs[customer(i)] = rng.normal()
                obs[provider(j)] = rng.normal()
            conf.update(m, obs, horizon=200)
            for pair in m.pairs:
                now = conf.nominal_width(*pair, horizon=200)
                assert now <= last[pair] + 1e-12
                last[pair] = now

    def test_reward_for_unmatched_agent_rejected(self):
        conf = UnstructuredConfidence(2, 2)
        m = Matching([(0, 0)])
        bad = obs_for(m, 0.1)
        bad[customer(1)] = 0.2
        with pytest.raises(ProtocolViolation):
            conf.update(m, bad, horizon=100)

    def test_missing_reward_rejected(self):
        conf = UnstructuredConfidence(2, 2)
        m = Matching([(0, 0)])
        with pytest.raises(ProtocolViolation):
            conf.update(m, {customer(0): 0.1}, horizon=100)


class TestTypedUpdate:
    def test_pooling_across_agents_of_same_type(self):
        conf = TypedConfidence(np.array([0, 0]), np.array([1, 1]), num_types=2)
        m = Matching([(0, 0), (1, 1)])
        conf.update(m, obs_for(m, 0.4), horizon=100)
        # Both pairs share the (0, 1) cell: two observations pooled.
        assert conf.type_counts[0, 1] == 2
        assert conf.type_counts[1, 0] == 2
        assert conf.type_mean[0, 1] == pytest.approx(0.4)
        # All four customer-side intervals are the same object of the cell.
        assert conf.hi_c[0, 0] == conf.hi_c[1, 1]

    def test_same_type_both_sides_counts_twice(self):
        conf = TypedConfidence(np.array([0]), np.array([0]), num_types=1)
        m = Matching([(0, 0)])
        conf.update(m, {customer(0): 0.2, provider(0): 0.6}, horizon=100)
        assert conf.type_counts[0, 0] == 2
        assert conf.type_mean[0, 0] == pytest.approx(0.4)


class TestLinearUpdate:
    def test_orthogonal_design_recovers_hidden_vector(self):
        # Contexts are standard basis vectors and rewards are noiseless, so
        # the ridge estimate converges to the hidden vector coordinatewise.
        phi = np.array([0.6, -0.3])
        ctx_p = np.eye(2)
        ctx_c = np.eye(2)
        conf = LinearConfidence(ctx_c, ctx_p, ConfidenceConfig())
        horizon = 500
        for t in range(400):
            j = t % 2
            m = Matching([(0, j)])
            conf.update(m, {customer(0): float(phi[j]), provider(j): 0.0}, horizon=horizon)
        slot = 0
        assert np.allclose(conf.phi_hat[slot], phi, atol=0.01)
        widths = [conf.width(customer(0), provider(j)) for j in range(2)]
        fresh = LinearConfidence(ctx_c, ctx_p, ConfidenceConfig())
        assert all(w < fresh.width(customer(0), provider(j)) for j, w in enumerate(widths))

    def test_bonus_shrinks_with_observations(self):
        rng = np.random.default_rng(11)
        ctx = np.array([[0.8, 0.1], [0.2, 0.7]])
        conf = LinearConfidence(ctx, ctx, ConfidenceConfig())
        c = ctx[1]
        slot = 0
        prev = float(c @ np.linalg.inv(conf.V[slot]) @ c)
        m = Matching([(0, 1)])
        for _ in range(50):
            conf.update(m, {customer(0): rng.normal(), provider(1): rng.normal()}, horizon=100)
            now = float(c @ np.linalg.inv(conf.V[slot]) @ c)
            assert now <= prev + 1e-12
            prev = now

    def test_beta_formula(self):
        ctx = np.eye(3)
        conf = LinearConfidence(ctx, ctx, ConfidenceConfig())
        horizon = 1000
        expected = 4.0 * 3 * math.log(1 + horizon) + 8.0 * math.log(6 * horizon)
        assert conf.beta(horizon) == pytest.approx(expected)


class TestProjections:
    def test_ucb_matrix_is_upper_endpoints(self):
        conf = UnstructuredConfidence(2, 2)
        m = Matching([(0, 1)])
        conf.update(m, obs_for(m, 0.7), horizon=4)
        ucb = conf.ucb_matrix()
        assert ucb.customer_values[0, 1] == conf.hi_c[0, 1]
        assert ucb.provider_values[1, 0] == conf.hi_p[1, 0]

    def test_contains_truth(self):
        conf = UnstructuredConfidence(2, 2)
        truth = UtilityMatrix(np.full((2, 2), 0.5), np.full((2, 2), -0.5))
        assert conf.contains(truth)
        conf.collapse_to(truth)
        assert conf.contains(truth)
        other = UtilityMatrix(np.full((2, 2), 0.6), np.full((2, 2), -0.5))
        assert not conf.contains(other)

    def test_snapshot_round_trips_json(self):
        conf = UnstructuredConfidence(2, 1)
        m = Matching([(1, 0)])
        conf.update(m, obs_for(m, 0.25), horizon=50)
        snap = json.loads(json.dumps(conf.snapshot()))
        assert snap["mode"] == "unstructured"
        entries = {(e["side"], e["agent"], e["partner"]): e for e in snap["pairs"]}
        e = entries[("customer", 1, 0)]
        assert e["n"] == 1 and e["mean"] == 0.25
        assert e["lo"] <= e["hi"]
