"""Competition among K cognitive users sharing N channels.

Users pick channels independently, contend on each free channel with a
uniform backoff draw, and the smallest draw transmits. This module holds
the closed forms (optimal symmetric mixed strategy, Nash proportional
split, their losses and decay rates) and the adaptive unknown-theta rules.
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from src.models.channel import ObservationCounts, ThetaVector
from src.models.errors import AllChannelsBusy
from src.models.index_strategies import sample_rows, slot_uniforms, top_m
from src.models.schemas import ChannelContention, ContentionOutcome, EquilibriumReport, MixedStrategy, Throughput

logger = logging.getLogger(__name__)

BISECTION_XTOL = 1e-15
EXPLORATION_EXPONENT = 2.0 / 3.0


def _positive_theta(theta: ThetaVector) -> np.ndarray:
    values = theta.as_array()
    if not np.any(values > 0):
        raise AllChannelsBusy(f"every channel has zero availability: {values.tolist()}")
    return values


def _indicator(n: int, channel: int) -> MixedStrategy:
    p = [0.0] * n
    p[channel] = 1.0
    return MixedStrategy(probabilities=tuple(p))


def _kkt_probabilities(values: np.ndarray, users: int, lam: float) -> np.ndarray:
    p = np.zeros_like(values)
    positive = values > 0
    p[positive] = 1.0 - (lam / (users * values[positive])) ** (1.0 / (users - 1))
    return np.clip(p, 0.0, None)


def kkt_optimal_mixed(theta: ThetaVector, users: int) -> Tuple[MixedStrategy, float]:
    """Symmetric mixed strategy maximizing per-user throughput, with its
    Lagrange multiplier.

    p_i = (1 - (lambda / (K theta_i))^(1/(K-1)))^+ with lambda set by
    bisection so the probabilities sum to one.
    """
    if users < 1:
        raise ValueError(f"users must be >= 1, got {users}")
    values = _positive_theta(theta)
    best = int(np.argmax(values))
    if users == 1:
        return _indicator(len(values), best), float(values[best])
    if np.count_nonzero(values > 0) == 1:
        return _indicator(len(values), best), 0.0

    def excess(lam: float) -> float:
        return float(_kkt_probabilities(values, users, lam).sum() - 1.0)

    lam = optimize.bisect(excess, 0.0, users * float(values.max()), xtol=BISECTION_XTOL, maxiter=500)
    p = _kkt_probabilities(values, users, lam)
    p = p / p.sum()
    return MixedStrategy(probabilities=tuple(float(v) for v in p)), float(lam)


def kkt_optimal_mixed_batch(theta: np.ndarray, users: int) -> np.ndarray:
    """Row-wise ``kkt_optimal_mixed`` for a (rows, channels) array with at
    least one positive entry per row.

    Solved exactly by water-filling: with the a best channels active,
    lambda^(1/(K-1)) = (a - 1) / sum (K theta_i)^(-1/(K-1)); the active set
    is the largest a whose weakest member keeps a positive probability.
    """
    rows, n = theta.shape
    index = np.arange(rows)
    if users == 1:
        p = np.zeros_like(theta)
        p[index, np.argmax(theta, axis=1)] = 1.0
        return p
    exponent = 1.0 / (users - 1)
    order = np.argsort(-theta, axis=1, kind="stable")
    ranked = np.take_along_axis(theta, order, axis=1)
    with np.errstate(divide="ignore", over="ignore"):
        inverse = np.where(ranked > 0, (users * np.maximum(ranked, 1e-300)) ** -exponent, np.inf)
    level = np.arange(n) / np.cumsum(inverse, axis=1)
    with np.errstate(invalid="ignore"):
        fits = level * inverse < 1.0
    active = n - 1 - np.argmax(fits[:, ::-1], axis=1)
    in_set = np.arange(n)[None, :] <= active[:, None]
    with np.errstate(invalid="ignore"):
        ranked_p = np.where(in_set, np.clip(1.0 - level[index, active][:, None] * inverse, 0.0, None), 0.0)
    p = np.zeros_like(theta)
    np.put_along_axis(p, order, ranked_p, axis=1)
    return p / p.sum(axis=1, keepdims=True)


def symmetric_throughput(theta: ThetaVector, users: int, strategy: MixedStrategy,
                         horizon: int = 1, bandwidth: float = 1.0) -> Throughput:
    """Per-user bits and total loss when all K users play ``strategy``.

    The loss is measured against B T sum(theta), every free slot used.
    """
    values = theta.as_array()
    p = np.asarray(strategy.probabilities)
    if len(p) != len(values):
        raise ValueError("strategy and theta disagree on the number of channels")
    idle = (1.0 - p) ** users
    scale = bandwidth * horizon
    per_user = scale * float(np.sum(values / users * (1.0 - idle)))
    loss = scale * float(np.sum(values * idle))
    return Throughput(per_user_bits=per_user, total_bits=per_user * users,
                      loss_bits=max(loss, 0.0), per_user_loss_bits=max(loss, 0.0) / users)


def mixed_deviation_gain(theta: ThetaVector, users: int, strategy: MixedStrategy,
                         horizon: int = 1, bandwidth: float = 1.0) -> float:
    """Bits a single user gains by always sensing the best fixed channel
    while the other K - 1 users keep playing ``strategy``."""
    values = theta.as_array()
    p = np.asarray(strategy.probabilities)
    # E[1 / (1 + Bin(K-1, p))] = (1 - (1-p)^K) / (K p), equal to 1 at p = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(p > 0, (1.0 - (1.0 - p) ** users) / (users * p), 1.0)
    current = symmetric_throughput(theta, users, strategy, horizon, bandwidth).per_user_bits
    return bandwidth * horizon * float(np.max(values * share)) - current


def nash_fractions(theta: ThetaVector) -> List[float]:
    """tau_i = theta_i / sum(theta)."""
    values = _positive_theta(theta)
    return (values / values.sum()).tolist()


def slot_win_probability(theta: ThetaVector, users: int) -> float:
    """Per-user chance of transmitting in a slot at the Nash split."""
    return float(_positive_theta(theta).sum() / users)


def nash_loss(theta: ThetaVector, users: int, horizon: int = 1, bandwidth: float = 1.0) -> float:
    values = theta.as_array()
    tau = np.asarray(nash_fractions(theta))
    return float(bandwidth * horizon * np.sum(values * (1.0 - tau) ** users))


def decay_constants(theta: ThetaVector) -> Tuple[float, float]:
    """Exponential loss-decay rates in K: c1 for the optimal mixed
    strategy, c2 for the Nash split. Infinite when a single channel is free."""
    values = _positive_theta(theta)
    positive = values[values > 0]
    q = len(positive)
    if q == 1:
        return math.inf, math.inf
    c1 = math.log(q / (q - 1))
    total = float(positive.sum())
    c2 = math.log(total / (total - float(positive.min())))
    return c1, c2


def round_allocation(tau: Sequence[float], users: int) -> List[int]:
    """Integer users per channel summing to K: floors of tau*K, then the
    leftovers to the largest remainders (lowest index on ties)."""
    scaled = np.asarray(tau, dtype=float) * users
    counts = np.floor(scaled + 1e-9).astype(int)
    remainder = scaled - counts
    short = users - int(counts.sum())
    if short > 0:
        order = np.argsort(-remainder, kind="stable")
        counts[order[:short]] += 1
    return counts.tolist()


def deviation_gain(theta: ThetaVector, users: int, allocation: Sequence[int],
                   current: int, target: int) -> Tuple[float, float]:
    """Win probability per slot of a user on ``current`` before and after
    moving alone to ``target``."""
    if sum(allocation) != users:
        raise ValueError(f"allocation {list(allocation)} does not sum to {users} users")
    if allocation[current] < 1:
        raise ValueError(f"no user is assigned to channel {current}")
    if target == current:
        raise ValueError("target must differ from the current channel")
    values = theta.as_array()
    before = float(values[current] / allocation[current])
    after = float(values[target] / (allocation[target] + 1))
    return before, after


def nash_is_stable(theta: ThetaVector, users: int, allocation: Sequence[int]) -> bool:
    """True when every unilateral move strictly lowers the mover's win probability."""
    n = theta.n_channels
    for current in range(n):
        if allocation[current] == 0:
            continue
        for target in range(n):
            if target == current:
                continue
            before, after = deviation_gain(theta, users, allocation, current, target)
            if after >= before:
                return False
    return True


def contention_resolve(contenders: Sequence[Sequence[int]], free: Sequence[bool],
                       rng: np.random.Generator) -> ContentionOutcome:
    """Backoff contention on every channel for one slot.

    Users are ordered by id and each draws a (backoff, tiebreak) pair of
    uniforms, the same (K, 2) layout ``resolve_batch`` consumes. On a free
    channel the smallest backoff transmits and equal backoffs fall to the
    larger tiebreak. Busy channels carry no winner.
    """
    if len(contenders) != len(free):
        raise ValueError("contenders and free flags disagree on the number of channels")
    ids = sorted({user for users in contenders for user in users})
    draws = dict(zip(ids, rng.random((len(ids), 2))))
    channels = []
    for users, is_free in zip(contenders, free):
        users = tuple(users)
        winner: Optional[int] = None
        if users and is_free:
            winner = min(users, key=lambda user: (draws[user][0], -draws[user][1]))
        channels.append(ChannelContention(contenders=users, free=bool(is_free), winner=winner))
    return ContentionOutcome(channels=tuple(channels))


def resolve_batch(chosen: np.ndarray, free: np.ndarray, backoff: np.ndarray, tiebreak: np.ndarray) -> np.ndarray:
    """Vectorized contention for (rows, users) choices: True where the user
    transmits. Backoff ties fall to the larger ``tiebreak`` draw."""
    same = chosen[:, :, None] == chosen[:, None, :]
    b_other = backoff[:, None, :]
    t_other = tiebreak[:, None, :]
    b_self = backoff[:, :, None]
    t_self = tiebreak[:, :, None]
    beaten = same & ((b_other < b_self) | ((b_other == b_self) & (t_other > t_self)))
    return free & ~beaten.any(axis=2)


def kkt_phase_start(horizon: int) -> int:
    """First slot index at which Rule 3 samples from the estimated optimum."""
    return max(1, math.ceil(math.log(horizon)))


def exploration_floor(slot: int) -> float:
    """Sensing count every channel must keep up with in the Rule 3 phase."""
    return slot ** EXPLORATION_EXPONENT


def rule2_choice(free: np.ndarray, sensed: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Rows of (free, sensed) counts to one channel each, drawn in proportion
    to the empirical rates (uniformly when every rate is zero)."""
    return sample_rows(free / sensed, u[:, free.shape[1]])


def rule3_choice(free: np.ndarray, sensed: np.ndarray, slot: int, users: int, horizon: int,
                 u: np.ndarray) -> np.ndarray:
    """Rule 2 before ``kkt_phase_start``; afterwards a draw from the optimal
    mixed strategy of the estimated rates.

    Every channel keeps at least ``exploration_floor(slot)`` sensings, even
    one whose estimate gets zero mass: while any channel is below the floor
    the least sensed channel is taken, ties going to ``u[:, :N]``.
    """
    if slot < kkt_phase_start(horizon):
        return rule2_choice(free, sensed, u)
    n = free.shape[1]
    rates = free / sensed
    p = np.zeros_like(rates)
    live = rates.sum(axis=1) > 0
    if live.any():
        with np.errstate(divide="ignore", invalid="ignore"):
            p[live] = kkt_optimal_mixed_batch(rates[live], users)
    chosen = sample_rows(p, u[:, n])
    starved = sensed.min(axis=1) < exploration_floor(slot)
    if starved.any():
        neglected = top_m(-sensed, u[:, :n], 1)[:, 0]
        chosen = np.where(starved, neglected, chosen)
    return chosen


def _count_rows(counts: ObservationCounts) -> Tuple[np.ndarray, np.ndarray]:
    return np.asarray(counts.free, float)[None, :], np.asarray(counts.sensed, float)[None, :]


def rule2_step(counts: ObservationCounts, rng: np.random.Generator) -> int:
    """Sample a channel with probability proportional to its empirical rate."""
    free, sensed = _count_rows(counts)
    return int(rule2_choice(free, sensed, slot_uniforms(rng, counts.n_channels))[0])


def rule3_step(counts: ObservationCounts, slot: int, users: int, horizon: int,
               rng: np.random.Generator) -> int:
    free, sensed = _count_rows(counts)
    return int(rule3_choice(free, sensed, slot, users, horizon, slot_uniforms(rng, counts.n_channels))[0])


def loss_slope(theta: ThetaVector, k_grid: Sequence[int], nash: bool = False) -> float:
    """Least-squares slope of ln L against K for the optimal mixed strategy
    or the Nash split."""
    ks = np.asarray(k_grid, dtype=float)
    losses = []
    for k in k_grid:
        if nash:
            losses.append(nash_loss(theta, int(k)))
        else:
            strategy, _ = kkt_optimal_mixed(theta, int(k))
            losses.append(symmetric_throughput(theta, int(k), strategy).loss_bits)
    losses = np.asarray(losses)
    if np.any(losses <= 0):
        return -math.inf
    slope, _ = np.polyfit(ks, np.log(losses), 1)
    return float(slope)


def equilibrium_report(theta: ThetaVector, users: int, horizon: int = 1, bandwidth: float = 1.0) -> EquilibriumReport:
    values = _positive_theta(theta)
    tau = nash_fractions(theta)
    strategy, lam = kkt_optimal_mixed(theta, users)
    optimal = symmetric_throughput(theta, users, strategy, horizon, bandwidth)
    nash = symmetric_throughput(theta, users, MixedStrategy(probabilities=tuple(tau)), horizon, bandwidth)
    c1, c2 = decay_constants(theta)
    allocation = round_allocation(tau, users)
    top = np.sort(values)[::-1][:min(users, len(values))]
    scale = bandwidth * horizon
    return EquilibriumReport(
        tau=tau,
        p_star=list(strategy.probabilities),
        lagrange_multiplier=lam,
        per_user_bits_p_star=optimal.per_user_bits,
        per_user_bits_nash=nash.per_user_bits,
        loss_bits_p_star=optimal.loss_bits,
        loss_bits_nash=nash_loss(theta, users, horizon, bandwidth),
        centralized_bits=scale * float(top.sum()),
        c1=c1,
        c2=c2,
        c1_prefactor_bits=scale * float(values.sum()),
        c2_prefactor_bits=scale * float(values[values > 0].min()),
        allocation=allocation,
        nash_stable=nash_is_stable(theta, users, allocation),
        p_star_deviation_gain_bits=mixed_deviation_gain(theta, users, strategy, horizon, bandwidth),
    )
