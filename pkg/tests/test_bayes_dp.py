"""Tests for the Bayesian dynamic program and the calibration indices."""
import inspect
import itertools
import sys
from contextlib import contextmanager
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest

from src.models.bayes_dp import (
    gittins_index,
    history_tree_value,
    known_channel,
    myopic_bayes_action,
    myopic_is_optimal,
    myopic_policy,
    optimal_action,
    optimal_value,
    policy_tree,
    policy_value,
    static_value,
    stopping_index,
    stopping_rule,
    switch_is_absorbing,
    symmetric_two_channel_action,
    symmetric_xi_update,
)
from src.models.channel import DiscretePrior, ObservationCounts, SensingOutcome, posterior_update
from src.models.errors import StateSpaceExceeded, UnknownState
from tests.conftest import random_two_atom


class TestExampleOptimalValue:
    """Two channels, 4/5 delta(0.1, 0) + 1/5 delta(0.8, 1), B = 100."""

    def test_values_by_horizon(self, example_prior):
        assert optimal_value(example_prior, 0)[0] == 0
        assert optimal_value(example_prior, 1)[0] == 24
        assert optimal_value(example_prior, 2)[0] == Fraction(252, 5)

    def test_optimal_actions(self, example_prior):
        _, table = optimal_value(example_prior, 2)
        assert optimal_action(table, ObservationCounts.zeros(2), 2) == (0, (0,))
        assert optimal_action(table, ObservationCounts(free=[1, 0], sensed=[1, 0]), 1)[0] == 1
        assert optimal_action(table, ObservationCounts(free=[0, 0], sensed=[1, 0]), 1)[0] == 0

    def test_myopic_references(self, example_prior):
        assert static_value(example_prior, 2) == 48
        assert policy_value(example_prior, 2, 100, myopic_policy) == Fraction(252, 5)

    def test_float_mode(self, example_prior):
        value, table = optimal_value(example_prior, 2, exact=False)
        assert value == pytest.approx(50.4, abs=1e-10)
        assert optimal_action(table, ObservationCounts.zeros(2), 2)[0] == 0

    def test_policy_tree(self, example_prior):
        _, table = optimal_value(example_prior, 2)
        tree = policy_tree(table)
        assert tree["sense"] == [1]
        assert tree["value_bits"] == "252/5"
        assert tree["next"]["free"]["sense"] == [2]
        assert tree["next"]["busy"]["sense"] == [1]
        assert tree["next"]["free"]["probability"] == "6/25"

    def test_unknown_state(self, example_prior):
        _, table = optimal_value(example_prior, 2)
        with pytest.raises(UnknownState):
            table.value(ObservationCounts(free=[0, 0], sensed=[5, 0]), 1)

    def test_state_cap(self, example_prior):
        with pytest.raises(StateSpaceExceeded):
            optimal_value(example_prior, 6, state_cap=5)

    def test_sensing_every_channel(self, example_prior):
        value, table = optimal_value(example_prior, 2, sensing=2)
        assert value == 88
        assert optimal_action(table, ObservationCounts.zeros(2), 2)[0] == (0, 1)


@contextmanager
def shallow_stack(headroom: int = 150):
    """Lower the recursion limit to a little above the current depth."""
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(len(inspect.stack()) + headroom)
    try:
        yield
    finally:
        sys.setrecursionlimit(old)


class TestDeepHorizon:
    """One channel, 1/2 delta(0.2) + 1/2 delta(0.8): every slot is worth 1/2."""

    @pytest.fixture
    def coin(self):
        return DiscretePrior.of([[0.2], [0.8]], [0.5, 0.5])

    def test_horizon_beyond_the_stack(self, coin):
        with shallow_stack():
            value, table = optimal_value(coin, 400, bandwidth=1, exact=False)
        assert value == pytest.approx(200)
        assert len(table) == 400 * 401 // 2

    def test_policy_value_beyond_the_stack(self, coin):
        with shallow_stack():
            value = policy_value(coin, 250, 1, myopic_policy, exact=False)
        assert value == pytest.approx(125)

    @pytest.mark.slow
    def test_long_horizon(self, coin):
        value, table = optimal_value(coin, 1500, bandwidth=1, exact=False)
        assert value == pytest.approx(750)
        assert table.value(ObservationCounts(free=[700], sensed=[1400]), 100) == pytest.approx(50)
        assert table.value(ObservationCounts(free=[1000], sensed=[1400]), 100) == pytest.approx(80)


class TestAgainstHistoryTree:
    def test_random_priors_match(self, rng):
        for _ in range(50):
            prior = random_two_atom(rng)
            for horizon in (2, 3, 4):
                value, _ = optimal_value(prior, horizon)
                assert value == history_tree_value(prior, horizon)

    def test_float_mode_is_close(self, rng):
        for _ in range(20):
            prior = random_two_atom(rng)
            exact, _ = optimal_value(prior, 4)
            approx, _ = optimal_value(prior, 4, exact=False)
            assert approx == pytest.approx(float(exact), abs=1e-10)

    def test_optimal_dominates_myopic(self, rng):
        for _ in range(20):
            prior = random_two_atom(rng)
            value, _ = optimal_value(prior, 4)
            assert value >= policy_value(prior, 4, 100, myopic_policy)
            assert value >= static_value(prior, 4)

    def test_value_grows_with_horizon(self, rng):
        prior = random_two_atom(rng)
        values = [optimal_value(prior, t)[0] for t in range(5)]
        assert values == sorted(values)


class TestMyopicRule:
    def test_sufficient_conditions(self, rng):
        checked = 0
        while checked < 20:
            prior = random_two_atom(rng)
            if not myopic_is_optimal(prior):
                continue
            checked += 1
            for horizon in (2, 3, 4):
                assert policy_value(prior, horizon, 100, myopic_policy) == optimal_value(prior, horizon)[0]

    def test_example_prefers_first_channel(self, example_prior, rng):
        assert myopic_bayes_action(example_prior, rng) == 0

    def test_balanced_prior_breaks_ties(self, rng):
        prior = DiscretePrior.of([[0.2, 0.8], [0.8, 0.2]], [0.5, 0.5])
        picks = {myopic_bayes_action(prior, rng) for _ in range(200)}
        assert picks == {0, 1}

    def test_symmetric_family(self, rng):
        assert symmetric_two_channel_action(Fraction(4, 5), rng) == 0
        assert symmetric_two_channel_action(Fraction(1, 5), rng) == 1
        draws = [symmetric_two_channel_action(Fraction(1, 2), rng) for _ in range(4000)]
        assert np.mean(draws) == pytest.approx(0.5, abs=0.05)

    def test_symmetric_update_matches_posterior(self):
        a, b, xi = Fraction(7, 10), Fraction(1, 5), Fraction(2, 5)
        prior = DiscretePrior.of([[a, b], [b, a]], [xi, 1 - xi])
        for channel, free in itertools.product((0, 1), (True, False)):
            outcome = SensingOutcome(channel=channel, free=free)
            assert symmetric_xi_update(xi, a, b, outcome) == posterior_update(prior, outcome).weights[0]


def _best_stopping_ratio(atoms, weights, horizon):
    """Brute force over every deterministic stopping rule on free/busy histories."""
    histories = [h for n in range(1, horizon) for h in itertools.product((1, 0), repeat=n)]
    best = Fraction(0)
    for decisions in itertools.product((True, False), repeat=len(histories)):
        go_on = dict(zip(histories, decisions))
        free_total, length_total = Fraction(0), Fraction(0)
        for theta, w in zip(atoms, weights):
            for path in itertools.product((1, 0), repeat=horizon):
                p = w
                for z in path:
                    p *= theta if z else 1 - theta
                tau = horizon
                for n in range(1, horizon):
                    if not go_on[path[:n]]:
                        tau = n
                        break
                free_total += p * sum(path[:tau])
                length_total += p * tau
        best = max(best, free_total / length_total)
    return best


class TestStoppingIndex:
    def test_point_mass(self):
        assert stopping_index(DiscretePrior.point_mass([0.6]), 5) == pytest.approx(0.6, abs=1e-9)

    def test_two_point_horizon_two(self):
        prior = DiscretePrior.of([[0], [1]], [0.5, 0.5])
        assert stopping_index(prior, 2) == pytest.approx(2 / 3, abs=1e-9)

    def test_matches_brute_force(self, rng):
        for _ in range(5):
            a, b = sorted(Fraction(int(v), 10) for v in rng.integers(0, 11, size=2))
            w = Fraction(int(rng.integers(1, 10)), 10)
            prior = DiscretePrior.of([[a], [b]], [w, 1 - w])
            expected = _best_stopping_ratio([a, b], [w, 1 - w], 3)
            assert stopping_index(prior, 3) == pytest.approx(float(expected), abs=1e-9)

    @pytest.mark.parametrize("offset, explores", [(Fraction(-1, 100), True), (Fraction(1, 100), False)])
    def test_decides_first_action_against_known_channel(self, offset, explores):
        rate = Fraction(2, 3) + offset
        prior = DiscretePrior.of([[0, rate], [1, rate]], [0.5, 0.5])
        assert known_channel(prior) == 1
        _, table = optimal_value(prior, 2, bandwidth=1)
        ties = optimal_action(table, ObservationCounts.zeros(2), 2)[1]
        assert ties == ((0,) if explores else (1,))

    @pytest.mark.parametrize("horizon", [2, 3, 4, 5])
    def test_index_is_the_switching_threshold(self, rng, horizon):
        for _ in range(10):
            a, b = (Fraction(int(v), 10) for v in rng.integers(1, 10, size=2))
            w = Fraction(int(rng.integers(1, 10)), 10)
            index = stopping_index(DiscretePrior.of([[a], [b]], [w, 1 - w]), horizon)
            for offset, explores in ((-1e-9, True), (1e-9, False)):
                rate = index + offset
                prior = DiscretePrior.of([[a, rate], [b, rate]], [w, 1 - w])
                _, table = optimal_value(prior, horizon, bandwidth=1)
                ties = optimal_action(table, ObservationCounts.zeros(2), horizon)[1]
                assert ties == ((0,) if explores else (1,)), (a, b, w, horizon, offset)

    def test_rule_agrees_with_index(self):
        marginal = DiscretePrior.of([[0.2], [0.9]], [0.5, 0.5])
        index = stopping_index(marginal, 6)
        assert stopping_rule(marginal, 6, index - 0.01)[0][0]
        assert not stopping_rule(marginal, 6, index + 0.01)[0][0]

    def test_rule_threshold_is_sharp(self, rng):
        for _ in range(10):
            low, high = sorted(rng.uniform(0.05, 0.95, size=2))
            w = float(rng.uniform(0.1, 0.9))
            marginal = DiscretePrior.of([[low], [high]], [w, 1 - w])
            horizon = int(rng.integers(2, 8))
            index = stopping_index(marginal, horizon)
            assert stopping_rule(marginal, horizon, index - 1e-9)[0][0]
            assert not stopping_rule(marginal, horizon, index + 1e-9)[0][0]

    def test_state_cap(self):
        with pytest.raises(StateSpaceExceeded):
            stopping_index(DiscretePrior.point_mass([0.5]), 100, state_cap=10)


def _discounted_gain(atoms, weights, rate, discount, horizon):
    """max over stopping times of E[sum discount^j (Z_j - rate)], first pull forced."""
    atoms = np.asarray(atoms, dtype=float)
    weights = np.asarray(weights, dtype=float)

    @lru_cache(maxsize=None)
    def value(s, n, forced):
        if n == horizon:
            return 0.0
        post = weights * atoms ** s * (1 - atoms) ** (n - s)
        p = float(post @ atoms / post.sum())
        q = p - rate + discount * (p * value(s + 1, n + 1, False) + (1 - p) * value(s, n + 1, False))
        return q if forced else max(q, 0.0)

    return value(0, 0, True)


class TestGittinsIndex:
    @pytest.mark.parametrize("discount", [0.5, 0.9, 0.99])
    def test_point_mass(self, discount):
        assert gittins_index(DiscretePrior.point_mass([0.35]), discount) == pytest.approx(0.35, abs=1e-9)

    @pytest.mark.parametrize("low, high", [(0.2, 0.8), (0.1, 0.5), (0.4, 0.6), (0.05, 0.95), (0.5, 0.9)])
    @pytest.mark.parametrize("discount", [0.7, 0.9, 0.95])
    def test_increases_with_optimism(self, low, high, discount):
        weights = (0.1, 0.3, 0.5, 0.7, 0.9)
        indices = [gittins_index(DiscretePrior.of([[low], [high]], [1 - w, w]), discount) for w in weights]
        assert all(a < b for a, b in zip(indices, indices[1:]))
        for w, index in zip(weights, indices):
            assert (1 - w) * low + w * high - 1e-9 <= index <= high + 1e-9

    @pytest.mark.parametrize("discount", [0.7, 0.9])
    def test_increases_with_the_better_atom(self, discount):
        indices = [gittins_index(DiscretePrior.of([[0.2], [high]], [0.5, 0.5]), discount)
                   for high in (0.3, 0.45, 0.6, 0.75, 0.9)]
        assert all(a < b for a, b in zip(indices, indices[1:]))

    def test_independent_recursion(self):
        prior = DiscretePrior.of([[0.2], [0.8]], [0.5, 0.5])
        index = gittins_index(prior, 0.9)
        assert 0.5 < index < 0.8
        assert _discounted_gain([0.2, 0.8], [0.5, 0.5], index - 1e-3, 0.9, 200) > 0
        assert _discounted_gain([0.2, 0.8], [0.5, 0.5], index + 1e-3, 0.9, 200) < 0

    def test_rejects_bad_discount(self):
        with pytest.raises(ValueError):
            gittins_index(DiscretePrior.point_mass([0.5]), 1.0)


class TestKnownChannelSwitch:
    def test_switch_is_absorbing(self, rng):
        for _ in range(20):
            prior = random_two_atom(rng, known_second=True)
            _, table = optimal_value(prior, 4)
            assert switch_is_absorbing(table, 1)
