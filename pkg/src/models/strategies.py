"""Channel-selection strategies, batched over replications.

Every strategy instance serves R independent replications at once: counts
are (R, N) arrays and ``choose`` returns an (R, M) array of channels. All
randomness arrives through the per-slot uniforms ``u`` of shape (R, N + 1)
drawn from each replication's own user stream, so a replication's
decisions never depend on which other replications share the batch.
Columns ``u[:, :N]`` break ties; ``u[:, N]`` drives sampling.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Tuple, Type

import numpy as np
from scipy.special import logsumexp

from src.config.settings import DEFAULT_DISCOUNT, DEFAULT_STATE_CAP, DEFAULT_TRUNCATION_EPS
from src.models.bayes_dp import ValueTable, gittins_index, known_channel, optimal_value, stopping_rule
from src.models.channel import DiscretePrior, is_product, marginal
from src.models.errors import ConfigInvalid, ZeroLikelihood
from src.models.index_strategies import sample_rows, switch_uniform, top_m, ucb_scores, uniform_channel
from src.models.multiuser import kkt_optimal_mixed_batch, rule2_choice, rule3_choice

logger = logging.getLogger(__name__)


@dataclass
class StrategyContext:
    """What a strategy may know about the run it is part of."""
    n_channels: int
    horizon: int
    theta: np.ndarray
    sensing: int = 1
    bandwidth: float = 1.0
    users: int = 1
    user: int = 0
    belief: Optional[DiscretePrior] = None
    discount: float = DEFAULT_DISCOUNT
    truncation_eps: float = DEFAULT_TRUNCATION_EPS
    exact: bool = True
    state_cap: int = DEFAULT_STATE_CAP

    @property
    def replications(self) -> int:
        return self.theta.shape[0]


def round_robin(slot: int, n_channels: int, sensing: int, offset: np.ndarray) -> np.ndarray:
    """Initialization sweep: slot t senses channels t*M .. t*M + M - 1 (mod N)."""
    base = (slot - 1) * sensing + np.arange(sensing)
    return (offset[:, None] + base[None, :]) % n_channels


class Strategy(ABC):
    name = ""
    single_channel = False
    needs_belief = False

    def __init__(self, context: StrategyContext):
        if self.single_channel and context.sensing != 1:
            raise ConfigInvalid(f"strategy '{self.name}' senses one channel per slot",
                                [{"field": "sensing", "message": "must be 1 for this strategy"}])
        if self.needs_belief and context.belief is None:
            raise ConfigInvalid(f"strategy '{self.name}' needs a prior",
                                [{"field": "prior", "message": f"required by '{self.name}'"}])
        self.context = context
        rows, n = context.replications, context.n_channels
        self.rows = np.arange(rows)
        self.free = np.zeros((rows, n), dtype=np.int64)
        self.sensed = np.zeros((rows, n), dtype=np.int64)

    @property
    def n_channels(self) -> int:
        return self.context.n_channels

    @property
    def sensing(self) -> int:
        return self.context.sensing

    @abstractmethod
    def choose(self, slot: int, u: np.ndarray) -> np.ndarray:
        """Channels to sense in ``slot`` (1-based), shape (R, M)."""

    def observe(self, slot: int, chosen: np.ndarray, free: np.ndarray) -> None:
        rows = self.rows[:, None]
        self.sensed[rows, chosen] += 1
        self.free[rows, chosen] += free


class InitializedStrategy(Strategy):
    """Round-robin over all channels for ceil(N/M) slots, then ``decide``."""

    @property
    def init_slots(self) -> int:
        return math.ceil(self.n_channels / self.sensing)

    def init_offset(self) -> np.ndarray:
        return np.zeros(len(self.rows), dtype=np.int64)

    def choose(self, slot: int, u: np.ndarray) -> np.ndarray:
        if slot <= self.init_slots:
            return round_robin(slot, self.n_channels, self.sensing, self.init_offset())
        return self.decide(slot, u)

    @abstractmethod
    def decide(self, slot: int, u: np.ndarray) -> np.ndarray:
        pass


class GenieStrategy(Strategy):
    """Knows theta; always senses the M best channels."""
    name = "genie"

    def choose(self, slot: int, u: np.ndarray) -> np.ndarray:
        return top_m(self.context.theta, u[:, :self.n_channels], self.sensing)


class RandomStrategy(Strategy):
    name = "random"

    def choose(self, slot: int, u: np.ndarray) -> np.ndarray:
        return top_m(u[:, :self.n_channels], np.zeros_like(u[:, :self.n_channels]), self.sensing)


class MyopicFreqStrategy(InitializedStrategy):
    """Largest empirical free frequency X/Y."""
    name = "myopic-freq"

    def decide(self, slot: int, u: np.ndarray) -> np.ndarray:
        return top_m(self.free / self.sensed, u[:, :self.n_channels], self.sensing)


class UcbStrategy(InitializedStrategy):
    """Single-channel UCB rule."""
    name = "ucb1"
    single_channel = True

    def decide(self, slot: int, u: np.ndarray) -> np.ndarray:
        return top_m(ucb_scores(self.free, self.sensed, slot), u[:, :self.n_channels], self.sensing)


class UcbMultiStrategy(UcbStrategy):
    """Top-M channels by UCB index."""
    name = "ucb-multi"
    single_channel = False


class StayWithWinnerStrategy(Strategy):
    """Repeat a channel found free; after a busy slot move uniformly to another channel."""
    name = "stay-with-winner"
    single_channel = True

    def __init__(self, context: StrategyContext):
        super().__init__(context)
        self.current = np.zeros(len(self.rows), dtype=np.int64)
        self.last_free = np.ones(len(self.rows), dtype=bool)

    def choose(self, slot: int, u: np.ndarray) -> np.ndarray:
        n = self.n_channels
        draw = u[:, n]
        if slot == 1:
            self.current = uniform_channel(draw, n)
        else:
            self.current = np.where(self.last_free, self.current, switch_uniform(self.current, n, draw))
        return self.current[:, None]

    def observe(self, slot: int, chosen: np.ndarray, free: np.ndarray) -> None:
        super().observe(slot, chosen, free)
        self.last_free = free[:, 0].astype(bool)


class OptimisticStayWithWinnerStrategy(StayWithWinnerStrategy):
    """Alternates between the two best channels on every busy slot, the
    best switching rule a stay-with-winner user could hope for."""
    name = "stay-with-winner-optimistic"

    def __init__(self, context: StrategyContext):
        super().__init__(context)
        order = np.argsort(-context.theta, axis=1, kind="stable")
        self.pair = order[:, :2] if self.n_channels > 1 else np.repeat(order[:, :1], 2, axis=1)

    def choose(self, slot: int, u: np.ndarray) -> np.ndarray:
        if slot == 1:
            self.current = self.pair[:, 0].copy()
        else:
            other = np.where(self.current == self.pair[:, 0], self.pair[:, 1], self.pair[:, 0])
            self.current = np.where(self.last_free, self.current, other)
        return self.current[:, None]


class MyopicBayesStrategy(Strategy):
    """Largest posterior mean availability under the configured prior."""
    name = "myopic-bayes"
    needs_belief = True

    def __init__(self, context: StrategyContext):
        super().__init__(context)
        belief = context.belief
        self.atoms = belief.atoms_array()
        with np.errstate(divide="ignore"):
            self.log_atoms = np.log(self.atoms)
            self.log_busy = np.log1p(-self.atoms)
            prior = np.log(belief.weights_array())
        self.log_w = np.repeat(prior[None, :], len(self.rows), axis=0)

    def choose(self, slot: int, u: np.ndarray) -> np.ndarray:
        weights = np.exp(self.log_w - logsumexp(self.log_w, axis=1, keepdims=True))
        return top_m(weights @ self.atoms, u[:, :self.n_channels], self.sensing)

    def observe(self, slot: int, chosen: np.ndarray, free: np.ndarray) -> None:
        super().observe(slot, chosen, free)
        free_lik = self.log_atoms[:, chosen].transpose(1, 0, 2)
        busy_lik = self.log_busy[:, chosen].transpose(1, 0, 2)
        self.log_w = self.log_w + np.where(free[:, None, :].astype(bool), free_lik, busy_lik).sum(axis=2)
        dead = ~np.isfinite(self.log_w.max(axis=1))
        if dead.any():
            raise ZeroLikelihood(f"slot {slot}: observations impossible under the prior in {int(dead.sum())} replications")


@lru_cache(maxsize=8)
def cached_value_table(belief: DiscretePrior, horizon: int, bandwidth: float, sensing: int,
                       exact: bool, state_cap: int) -> ValueTable:
    _, table = optimal_value(belief, horizon, bandwidth, sensing=sensing, exact=exact, state_cap=state_cap)
    return table


class DpOptimalStrategy(Strategy):
    """Follows the Bayes-optimal table; ties split with the sampling uniform."""
    name = "dp-optimal"
    needs_belief = True

    def __init__(self, context: StrategyContext):
        super().__init__(context)
        self.table = cached_value_table(context.belief, context.horizon, context.bandwidth, context.sensing,
                                        context.exact, context.state_cap)

    def choose(self, slot: int, u: np.ndarray) -> np.ndarray:
        remaining = self.context.horizon - slot + 1
        chosen = np.empty((len(self.rows), self.sensing), dtype=np.int64)
        for r in self.rows:
            key = tuple(zip(self.free[r].tolist(), self.sensed[r].tolist()))
            ties = self.table.ties(key, remaining)
            chosen[r] = ties[min(int(u[r, self.n_channels] * len(ties)), len(ties) - 1)]
        return chosen


class GittinsStrategy(Strategy):
    """Largest discounted index of each channel's marginal posterior."""
    name = "gittins"
    needs_belief = True

    def __init__(self, context: StrategyContext):
        super().__init__(context)
        if not is_product(context.belief):
            logger.warning("Prior is not a product of channel marginals; indices use the marginals only")
        self.marginals = [marginal(context.belief, i) for i in range(self.n_channels)]
        self._cache: List[Dict[Tuple[int, int], float]] = [{} for _ in range(self.n_channels)]

    def index(self, channel: int, s: int, n: int) -> float:
        cache = self._cache[channel]
        if (s, n) not in cache:
            cache[(s, n)] = gittins_index(self.marginals[channel], self.context.discount,
                                          self.context.truncation_eps, start=(s, n))
        return cache[(s, n)]

    def choose(self, slot: int, u: np.ndarray) -> np.ndarray:
        scores = np.empty(self.free.shape)
        for r in self.rows:
            for c in range(self.n_channels):
                scores[r, c] = self.index(c, int(self.free[r, c]), int(self.sensed[r, c]))
        return top_m(scores, u[:, :self.n_channels], self.sensing)


class StoppingIndexStrategy(Strategy):
    """Two channels, one of known availability: sense the unknown one and
    switch for good once its stopping index drops to the known rate."""
    name = "stopping-index"
    single_channel = True
    needs_belief = True

    def __init__(self, context: StrategyContext):
        super().__init__(context)
        belief = context.belief
        known = known_channel(belief) if belief.n_channels == 2 else None
        if known is None:
            raise ConfigInvalid("stopping-index needs two channels, one with known availability",
                                [{"field": "prior", "message": "no channel has the same theta in every atom"}])
        self.known = known
        self.unknown = 1 - known
        rate = float(next(a[known] for a, w in zip(belief.atoms, belief.weights) if w > 0))
        self.keep = stopping_rule(marginal(belief, self.unknown), context.horizon, rate, context.state_cap)
        self.switched = np.zeros(len(self.rows), dtype=bool)

    def choose(self, slot: int, u: np.ndarray) -> np.ndarray:
        active = ~self.switched
        if active.any():
            keep = self.keep[slot - 1][self.free[:, self.unknown]]
            self.switched = self.switched | (active & ~keep)
        return np.where(self.switched, self.known, self.unknown)[:, None]


class NashTauStrategy(Strategy):
    """Knows theta; samples channels in proportion to availability."""
    name = "nash-tau"
    single_channel = True

    def __init__(self, context: StrategyContext):
        super().__init__(context)
        self.p = self._distribution(context.theta)

    def _distribution(self, theta: np.ndarray) -> np.ndarray:
        totals = theta.sum(axis=1, keepdims=True)
        uniform = np.full_like(theta, 1.0 / theta.shape[1])
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, theta / totals, uniform)

    def choose(self, slot: int, u: np.ndarray) -> np.ndarray:
        return sample_rows(self.p, u[:, self.n_channels])[:, None]


class KktMixedStrategy(NashTauStrategy):
    """Knows theta; samples from the optimal symmetric mixed strategy for K users."""
    name = "kkt-mixed"

    def _distribution(self, theta: np.ndarray) -> np.ndarray:
        p = np.full_like(theta, 1.0 / theta.shape[1])
        live = theta.sum(axis=1) > 0
        if live.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                p[live] = kkt_optimal_mixed_batch(theta[live], self.context.users)
        return p


class Rule2Strategy(InitializedStrategy):
    """Unknown theta: sample channels in proportion to the empirical rates.

    Initialization senses every channel once, staggered by user index, and
    counts each as free whatever was observed.
    """
    name = "rule2"
    single_channel = True

    def init_offset(self) -> np.ndarray:
        return np.full(len(self.rows), self.context.user % self.n_channels, dtype=np.int64)

    def observe(self, slot: int, chosen: np.ndarray, free: np.ndarray) -> None:
        if slot <= self.init_slots:
            free = np.ones_like(free)
        super().observe(slot, chosen, free)

    def decide(self, slot: int, u: np.ndarray) -> np.ndarray:
        return rule2_choice(self.free, self.sensed, u)[:, None]


class Rule3Strategy(Rule2Strategy):
    """Rule 2 until slot ceil(ln T), then sampling from the optimal mixed
    strategy of the estimated rates with a growing sensing floor per channel."""
    name = "rule3"

    def decide(self, slot: int, u: np.ndarray) -> np.ndarray:
        return rule3_choice(self.free, self.sensed, slot, self.context.users, self.context.horizon, u)[:, None]


STRATEGIES: Dict[str, Type[Strategy]] = {
    cls.name: cls
    for cls in (
        GenieStrategy,
        RandomStrategy,
        MyopicFreqStrategy,
        MyopicBayesStrategy,
        StayWithWinnerStrategy,
        OptimisticStayWithWinnerStrategy,
        UcbStrategy,
        UcbMultiStrategy,
        DpOptimalStrategy,
        GittinsStrategy,
        StoppingIndexStrategy,
        NashTauStrategy,
        KktMixedStrategy,
        Rule2Strategy,
        Rule3Strategy,
    )
}


def build_strategy(name: str, context: StrategyContext) -> Strategy:
    try:
        cls = STRATEGIES[name]
    except KeyError:
        raise ConfigInvalid(f"unknown strategy '{name}'",
                            [{"field": "strategies", "message": f"choose from {sorted(STRATEGIES)}"}]) from None
    return cls(context)
