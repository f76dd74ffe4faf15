"""Tests for the channel model: theta vectors, priors, posteriors and sampling."""
import itertools
from fractions import Fraction

import numpy as np
import pytest
from pydantic import ValidationError

from src.models.channel import (
    DiscretePrior,
    History,
    ObservationCounts,
    SensingOutcome,
    ThetaVector,
    expected_availability,
    is_product,
    log_posterior_weights,
    marginal,
    posterior_from_counts,
    posterior_update,
    product_prior,
    sample_slot,
    sample_theta,
)
from src.models.errors import ZeroLikelihood
from src.services.rng import RngSeed


class TestThetaVector:
    def test_parses_numbers_and_ratios(self):
        theta = ThetaVector.of([0.1, "1/3", 1])
        assert theta.values == (Fraction(1, 10), Fraction(1, 3), Fraction(1))
        np.testing.assert_allclose(theta.as_array(), [0.1, 1 / 3, 1.0])

    @pytest.mark.parametrize("values", [[], [1.2], [-0.1, 0.5]])
    def test_rejects_invalid(self, values):
        with pytest.raises(ValidationError):
            ThetaVector.of(values)

    def test_best_channel_prefers_lowest_index(self):
        assert ThetaVector.of([0.3, 0.7, 0.7]).best_channel() == 1


class TestDiscretePrior:
    def test_renormalizes_within_tolerance(self):
        prior = DiscretePrior.of([[0.2], [0.4]], [0.5, 0.5 + 1e-13])
        assert sum(prior.weights) == 1

    def test_rejects_bad_weights(self):
        with pytest.raises(ValidationError):
            DiscretePrior.of([[0.2], [0.4]], [0.5, 0.4])
        with pytest.raises(ValidationError):
            DiscretePrior.of([[0.2], [0.4]], [1.5, -0.5])

    def test_rejects_ragged_atoms(self):
        with pytest.raises(ValidationError):
            DiscretePrior.of([[0.2, 0.1], [0.4]], [0.5, 0.5])

    def test_json_round_trip(self, example_prior):
        again = DiscretePrior.model_validate(example_prior.model_dump(mode="json"))
        assert again == example_prior


class TestSampling:
    def test_single_atom_is_always_drawn(self, rng):
        prior = DiscretePrior.point_mass([0.3, 0.7])
        for _ in range(100):
            assert sample_theta(prior, rng).values == (Fraction(3, 10), Fraction(7, 10))

    @pytest.mark.slow
    def test_example_prior_frequency(self, example_prior, rng):
        draws = [sample_theta(example_prior, rng).values[1] == 0 for _ in range(100_000)]
        assert np.mean(draws) == pytest.approx(0.8, abs=0.01)

    def test_equal_atoms_split_evenly(self, rng):
        prior = DiscretePrior.of([[0.1], [0.9]], [0.5, 0.5])
        draws = [sample_theta(prior, rng).values[0] == Fraction(1, 10) for _ in range(20_000)]
        assert np.mean(draws) == pytest.approx(0.5, abs=0.015)

    def test_extreme_channels(self, rng):
        theta = ThetaVector.of([1, 0])
        for _ in range(1000):
            assert sample_slot(theta, rng) == [True, False]

    def test_free_rate_matches_theta(self, rng):
        theta = ThetaVector.of([0.5])
        rate = np.mean([sample_slot(theta, rng)[0] for _ in range(100_000)])
        assert abs(rate - 0.5) < 3 * np.sqrt(0.25 / 100_000)

    def test_same_seed_same_draws(self):
        a = RngSeed(seed=7, stream=3).generator(1).random(5)
        b = RngSeed(seed=7, stream=3).generator(1).random(5)
        c = RngSeed(seed=7, stream=4).generator(1).random(5)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestPosteriorUpdate:
    def test_channel_one_free(self, example_prior):
        post = posterior_update(example_prior, SensingOutcome(channel=0, free=True))
        assert post.weights == (Fraction(1, 3), Fraction(2, 3))
        assert post.atoms == example_prior.atoms

    def test_channel_two_free_identifies_atom(self, example_prior):
        post = posterior_update(example_prior, SensingOutcome(channel=1, free=True))
        assert post.weights == (0, 1)

    def test_point_mass_is_fixed(self):
        prior = DiscretePrior.point_mass([0.4, 0.6])
        assert posterior_update(prior, SensingOutcome(channel=1, free=False)) == prior

    def test_impossible_observation(self):
        prior = DiscretePrior.point_mass([0.4, 0])
        with pytest.raises(ZeroLikelihood):
            posterior_update(prior, SensingOutcome(channel=1, free=True))


class TestPosteriorFromCounts:
    def test_zero_counts_leave_prior(self, example_prior):
        assert posterior_from_counts(example_prior, ObservationCounts.zeros(2)) == example_prior

    def test_matches_single_update(self, example_prior):
        counts = ObservationCounts(free=[1, 0], sensed=[1, 0])
        assert posterior_from_counts(example_prior, counts).weights == (Fraction(1, 3), Fraction(2, 3))

    def test_matches_sequential_updates(self, example_prior):
        step = posterior_update(example_prior, SensingOutcome(channel=0, free=True))
        step = posterior_update(step, SensingOutcome(channel=0, free=False))
        counts = ObservationCounts(free=[1, 0], sensed=[2, 0])
        assert posterior_from_counts(example_prior, counts) == step

    def test_order_independent_up_to_four_observations(self):
        prior = DiscretePrior.of([["1/5", "1/2"], ["3/5", "1/4"], ["9/10", "2/3"]], ["1/2", "1/3", "1/6"])
        outcomes = [SensingOutcome(channel=c, free=f) for c in (0, 1) for f in (True, False)]
        for length in range(1, 5):
            for sequence in itertools.product(outcomes, repeat=length):
                counts = ObservationCounts.zeros(2)
                post = prior
                for outcome in sequence:
                    post = posterior_update(post, outcome)
                    counts.record(outcome.channel, outcome.free)
                assert posterior_from_counts(prior, counts) == post
                assert sum(post.weights) == 1

    def test_float_path_agrees(self, example_prior):
        counts = ObservationCounts(free=[2, 0], sensed=[5, 1])
        exact = posterior_from_counts(example_prior, counts)
        approx = posterior_from_counts(example_prior, counts, exact=False)
        np.testing.assert_allclose(approx.weights_array(), exact.weights_array(), atol=1e-12)

    def test_long_blocks_do_not_underflow(self):
        prior = DiscretePrior.of([[0.3], [0.5], [0.7]], ["1/3", "1/3", "1/3"])
        counts = ObservationCounts(free=[5000], sensed=[10_000])
        log_w = log_posterior_weights(prior, counts)
        assert np.isfinite(log_w[1]) and log_w[1] == pytest.approx(0.0, abs=1e-12)
        post = posterior_from_counts(prior, counts, exact=False)
        assert float(post.weights[1]) == pytest.approx(1.0)

    def test_impossible_counts(self, example_prior):
        with pytest.raises(ZeroLikelihood):
            posterior_from_counts(example_prior, ObservationCounts(free=[0, 1], sensed=[0, 2]))


class TestAvailability:
    def test_example_means(self, example_prior):
        assert expected_availability(example_prior, 0) == Fraction(6, 25)
        assert expected_availability(example_prior, 1) == Fraction(1, 5)

    def test_point_mass(self):
        assert expected_availability(DiscretePrior.point_mass([0.25, 0.5]), 1) == Fraction(1, 2)

    def test_marginal_merges_atoms(self):
        prior = DiscretePrior.of([[0.2, 0.1], [0.2, 0.9], [0.6, 0.1]], [0.25, 0.25, 0.5])
        m = marginal(prior, 0)
        assert m.atoms == ((Fraction(1, 5),), (Fraction(3, 5),))
        assert m.weights == (Fraction(1, 2), Fraction(1, 2))

    def test_product_detection(self, example_prior):
        a = DiscretePrior.of([[0.2], [0.6]], [0.5, 0.5])
        b = DiscretePrior.of([[0.3], [0.9]], [0.25, 0.75])
        assert is_product(product_prior([a, b]))
        assert not is_product(example_prior)


class TestCountsAndHistory:
    def test_counts_invariant(self):
        with pytest.raises(ValidationError):
            ObservationCounts(free=[2], sensed=[1])

    def test_record_and_key(self):
        counts = ObservationCounts.zeros(2)
        counts.record(1, True)
        counts.record(1, False)
        assert counts.key() == ((0, 0), (1, 2))

    def test_history_folds_into_counts(self):
        history = History().append([SensingOutcome(channel=0, free=True)])
        history = history.append([SensingOutcome(channel=0, free=False)])
        assert [e.slot for e in history.entries] == [1, 2]
        assert history.counts(2).key() == ((1, 2), (0, 0))

    def test_history_slots_must_increase(self):
        entry = {"slot": 2, "outcomes": []}
        with pytest.raises(ValidationError):
            History(entries=[entry, entry])
