"""The one-state rule functions and the batched strategies make the same
choice from the same counts and the same uniforms."""
import numpy as np
import pytest

from src.models.channel import ObservationCounts
from src.models.index_strategies import (
    StrategyState,
    baseline_myopic_freq,
    baseline_random,
    baseline_stay_with_winner,
    rule1_choose,
    rule4_choose,
)
from src.models.multiuser import contention_resolve, resolve_batch, rule2_step, rule3_step
from src.models.strategies import StrategyContext, build_strategy

SEEDS = range(40)


def scripted_counts(seed, n=4, floor=1):
    rng = np.random.default_rng(1000 + seed)
    sensed = rng.integers(floor, 30, size=n)
    free = rng.integers(0, sensed + 1)
    return free, sensed


def batched(name, free, sensed, **context):
    strategy = build_strategy(name, StrategyContext(n_channels=len(free), horizon=context.pop("horizon", 1000),
                                                    theta=np.full((1, len(free)), 0.5), **context))
    strategy.free[:] = free
    strategy.sensed[:] = sensed
    return strategy


def uniforms(seed, n):
    return np.random.default_rng(seed).random((1, n + 1))


def scalar_state(free, sensed, slot):
    return StrategyState(counts=ObservationCounts(free=free.tolist(), sensed=sensed.tolist()), slot=slot)


class TestIndexRules:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_ucb1(self, seed):
        free, sensed = scripted_counts(seed)
        slot = int(sensed.sum()) + 1
        expected = rule1_choose(scalar_state(free, sensed, slot), np.random.default_rng(seed))
        assert batched("ucb1", free, sensed).choose(slot, uniforms(seed, 4))[0, 0] == expected

    @pytest.mark.parametrize("seed", SEEDS)
    def test_ucb_multi(self, seed):
        free, sensed = scripted_counts(seed)
        slot = int(sensed.sum()) + 1
        expected = rule4_choose(scalar_state(free, sensed, slot), 2, np.random.default_rng(seed))
        assert batched("ucb-multi", free, sensed, sensing=2).choose(slot, uniforms(seed, 4))[0].tolist() == expected

    def test_ucb1_ties(self):
        free, sensed = np.array([2, 2, 1, 0]), np.array([4, 4, 4, 4])
        for seed in SEEDS:
            expected = rule1_choose(scalar_state(free, sensed, 17), np.random.default_rng(seed))
            assert batched("ucb1", free, sensed).choose(17, uniforms(seed, 4))[0, 0] == expected


class TestBaselines:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_random(self, seed):
        free, sensed = scripted_counts(seed)
        expected = baseline_random(scalar_state(free, sensed, 9), np.random.default_rng(seed))
        assert batched("random", free, sensed).choose(9, uniforms(seed, 4))[0, 0] == expected

    @pytest.mark.parametrize("seed", SEEDS)
    def test_myopic_frequency(self, seed):
        free, sensed = scripted_counts(seed)
        expected = baseline_myopic_freq(scalar_state(free, sensed, 9), np.random.default_rng(seed))
        assert batched("myopic-freq", free, sensed).choose(9, uniforms(seed, 4))[0, 0] == expected

    @pytest.mark.parametrize("seed", SEEDS)
    def test_stay_with_winner(self, seed):
        free, sensed = scripted_counts(seed)
        state = scalar_state(free, sensed, 9)
        first = baseline_stay_with_winner(state, None, False, np.random.default_rng(seed))
        strategy = batched("stay-with-winner", free, sensed)
        assert strategy.choose(1, uniforms(seed, 4))[0, 0] == first
        for current in range(4):
            for last_free in (True, False):
                strategy.current = np.array([current])
                strategy.last_free = np.array([last_free])
                expected = baseline_stay_with_winner(state, current, last_free, np.random.default_rng(seed))
                assert strategy.choose(9, uniforms(seed, 4))[0, 0] == expected


class TestAdaptiveRules:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_rule2(self, seed):
        free, sensed = scripted_counts(seed)
        expected = rule2_step(ObservationCounts(free=free.tolist(), sensed=sensed.tolist()), np.random.default_rng(seed))
        assert batched("rule2", free, sensed).choose(9, uniforms(seed, 4))[0, 0] == expected

    @pytest.mark.parametrize("slot", [6, 40, 400, 5000])
    def test_rule3(self, slot):
        for seed in SEEDS:
            free, sensed = scripted_counts(seed, floor=0)
            sensed = sensed + np.array([1, 40, 120, 300])
            counts = ObservationCounts(free=free.tolist(), sensed=sensed.tolist())
            expected = rule3_step(counts, slot, 4, 100_000, np.random.default_rng(seed))
            strategy = batched("rule3", free, sensed, users=4, horizon=100_000)
            assert strategy.choose(slot, uniforms(seed, 4))[0, 0] == expected


class TestContention:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_same_winners(self, seed):
        rng = np.random.default_rng(2000 + seed)
        users, n = 6, 3
        chosen = rng.integers(0, n, size=users)
        channel_free = rng.random(n) < 0.7
        contenders = [[k for k in range(users) if chosen[k] == c] for c in range(n)]
        outcome = contention_resolve(contenders, channel_free.tolist(), np.random.default_rng(seed))
        draws = np.random.default_rng(seed).random((users, 2))
        won = resolve_batch(chosen[None, :], channel_free[chosen][None, :], draws[None, :, 0], draws[None, :, 1])
        assert sorted(outcome.winners()) == np.flatnonzero(won[0]).tolist()
