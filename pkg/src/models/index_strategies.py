"""Non-parametric single-user rules and their loss accounting.

The array helpers (``ucb_scores``, ``top_m``) work on batches shaped
(replications, channels) and back both the one-state functions here and the
batched strategies in ``src.models.strategies``.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from src.models.channel import ObservationCounts, ThetaVector
from src.models.errors import DivergenceInfinite, UninitializedChannel
from src.models.schemas import LowerBound

logger = logging.getLogger(__name__)


@dataclass
class StrategyState:
    """Counts, global slot index and rule parameters of one user."""
    counts: ObservationCounts
    slot: int = 1
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.slot < 1:
            raise ValueError(f"slot must be >= 1, got {self.slot}")


def ucb_scores(free: np.ndarray, sensed: np.ndarray, slot: int) -> np.ndarray:
    """X/Y + sqrt(2 ln j / Y) elementwise; needs every Y >= 1."""
    return free / sensed + np.sqrt(2.0 * math.log(slot) / sensed)


def top_m(scores: np.ndarray, u: np.ndarray, m: int) -> np.ndarray:
    """Indices of the m largest scores per row, ties broken by the uniforms ``u``.

    Both arrays are (rows, channels); the result is (rows, m).
    """
    order = np.lexsort((u, scores), axis=-1)
    return order[:, -m:][:, ::-1]


def slot_uniforms(rng: np.random.Generator, n_channels: int) -> np.ndarray:
    """One slot's uniforms for a single user, laid out as the batched
    strategies receive them: columns :N break ties, column N drives sampling."""
    return rng.random((1, n_channels + 1))


def sample_rows(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One draw per row from the weights in ``p`` using uniforms ``u``.

    Rows with zero total weight draw uniformly.
    """
    p = np.where(p.sum(axis=1, keepdims=True) > 0, p, 1.0)
    idx = (np.cumsum(p, axis=1) < u[:, None] * p.sum(axis=1, keepdims=True)).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1)


def uniform_channel(draw, n_channels: int):
    """Map a uniform draw (scalar or array) onto 0 .. n_channels - 1."""
    return np.minimum((np.asarray(draw) * n_channels).astype(np.int64), n_channels - 1)


def ucb_index(counts: ObservationCounts, channel: int, slot: int) -> float:
    """Empirical availability plus the exploration bonus sqrt(2 ln j / Y)."""
    if slot < 1:
        raise ValueError(f"slot must be >= 1, got {slot}")
    y = counts.sensed[channel]
    if y == 0:
        raise UninitializedChannel(f"channel {channel} has not been sensed yet")
    return counts.free[channel] / y + math.sqrt(2.0 * math.log(slot) / y)


def _require_initialized(counts: ObservationCounts) -> None:
    missing = [i for i, y in enumerate(counts.sensed) if y == 0]
    if missing:
        raise UninitializedChannel(f"channels {missing} have not been sensed yet")


def rule4_choose(state: StrategyState, m: int, rng: np.random.Generator) -> List[int]:
    """The m channels with the largest UCB index, best first."""
    counts = state.counts
    if not 1 <= m <= counts.n_channels:
        raise ValueError(f"m must be in [1, {counts.n_channels}], got {m}")
    _require_initialized(counts)
    scores = ucb_scores(np.asarray(counts.free, float)[None, :], np.asarray(counts.sensed, float)[None, :], state.slot)
    n = counts.n_channels
    return [int(c) for c in top_m(scores, slot_uniforms(rng, n)[:, :n], m)[0]]


def rule1_choose(state: StrategyState, rng: np.random.Generator) -> int:
    return rule4_choose(state, 1, rng)[0]


def baseline_random(state: StrategyState, rng: np.random.Generator) -> int:
    n = state.counts.n_channels
    u = slot_uniforms(rng, n)[:, :n]
    return int(top_m(u, np.zeros_like(u), 1)[0, 0])


def baseline_myopic_freq(state: StrategyState, rng: np.random.Generator) -> int:
    """Largest empirical free frequency X/Y; ties uniform."""
    counts = state.counts
    _require_initialized(counts)
    n = counts.n_channels
    scores = np.asarray(counts.free, float) / np.asarray(counts.sensed, float)
    return int(top_m(scores[None, :], slot_uniforms(rng, n)[:, :n], 1)[0, 0])


SwitchingRule = Callable[[Any, int, Any], Any]


def switch_uniform(current, n_channels: int, draw):
    """Uniform over the channels other than ``current``; works elementwise."""
    if n_channels == 1:
        return current
    pick = np.minimum((np.asarray(draw) * (n_channels - 1)).astype(np.int64), n_channels - 2)
    return pick + (pick >= current)


def baseline_stay_with_winner(state: StrategyState, last_channel: Optional[int], last_free: bool,
                              rng: np.random.Generator,
                              switching_rule: SwitchingRule = switch_uniform) -> int:
    """Repeat a channel found free; on busy hand over to ``switching_rule``."""
    n = state.counts.n_channels
    draw = slot_uniforms(rng, n)[0, n]
    if last_channel is None:
        return int(uniform_channel(draw, n))
    if last_free:
        return last_channel
    return int(switching_rule(last_channel, n, draw))


def kl_bernoulli(p: float, q: float) -> float:
    """D(p||q) in nats with 0 ln 0 = 0."""
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise ValueError(f"p and q must lie in [0, 1], got p={p}, q={q}")
    if p == q:
        return 0.0
    if q in (0.0, 1.0):
        raise DivergenceInfinite(f"D({p}||{q}) is infinite")
    total = 0.0
    if p > 0:
        total += p * math.log(p / q)
    if p < 1:
        total += (1 - p) * math.log((1 - p) / (1 - q))
    return max(total, 0.0)


def lower_bound_constant(theta: ThetaVector, bandwidth: float = 1.0) -> LowerBound:
    """B * sum over suboptimal channels of gap / D(theta_i || theta_best):
    the asymptotic loss per ln T no consistent strategy can beat."""
    values = theta.as_array()
    order = np.argsort(-values, kind="stable")
    best = int(order[0])
    if len(values) == 1:
        return LowerBound(bits_per_log_t=0.0)
    if values[order[1]] == values[best]:
        logger.warning(f"No unique best channel in theta={values.tolist()}; lower bound is degenerate")
        return LowerBound(bits_per_log_t=0.0, degenerate=True)
    total = 0.0
    for i, value in enumerate(values):
        if i == best:
            continue
        try:
            total += (values[best] - value) / kl_bernoulli(value, values[best])
        except DivergenceInfinite:
            logger.warning(f"Channel {i} has infinite divergence from the best channel; counted as zero")
    return LowerBound(bits_per_log_t=bandwidth * total)


def random_strategy_loss(theta: ThetaVector, horizon: int, bandwidth: float = 1.0) -> float:
    values = theta.as_array()
    return float(bandwidth * horizon * np.sum(values.max() - values) / len(values))


def optimistic_switching_fraction(theta: ThetaVector) -> float:
    """Long-run share of slots on the second-best channel when a user
    alternates between the two best channels on every busy slot."""
    values = np.sort(theta.as_array())[::-1]
    if len(values) < 2:
        return 0.0
    busy_best, busy_second = 1.0 - values[0], 1.0 - values[1]
    if busy_best + busy_second == 0:
        return 0.0
    return float(busy_best / (busy_best + busy_second))


def optimistic_switching_loss(theta: ThetaVector, horizon: int, bandwidth: float = 1.0) -> float:
    values = np.sort(theta.as_array())[::-1]
    if len(values) < 2:
        return 0.0
    return float(bandwidth * optimistic_switching_fraction(theta) * (values[0] - values[1]) * horizon)


def fit_exponent(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Slope of log y against log x by least squares."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) < 2 or len(x) != len(y):
        raise ValueError("need at least two matching points to fit an exponent")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("exponent fit needs positive values")
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)
