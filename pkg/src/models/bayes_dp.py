"""Finite-horizon Bayesian dynamic programming over count states.

Posterior states are keyed by per-channel (free, sensed) counts: under an
atom mixture the likelihood factorizes, so counts are sufficient and
states reached along different histories merge exactly. Values are exact
``Fraction`` by default; ``exact=False`` switches to float64 with
``FLOAT_TOL`` tie comparisons.

Also here: the one-known-channel stopping index and the discounted Gittins
index, both calibrated against a known channel by bisection.
"""
import itertools
import logging
import math
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize
from scipy.special import logsumexp, xlogy

from src.config.settings import DEFAULT_BANDWIDTH, DEFAULT_STATE_CAP, DEFAULT_TRUNCATION_EPS, FLOAT_TOL
from src.models.channel import (
    CountsKey,
    DiscretePrior,
    ObservationCounts,
    SensingOutcome,
    expected_availability,
    posterior_update,
)
from src.models.errors import StateSpaceExceeded, UnknownState, ZeroLikelihood

logger = logging.getLogger(__name__)

Number = Union[Fraction, float]
Action = Tuple[int, ...]
Policy = Callable[[DiscretePrior, int], Sequence[Union[int, Action]]]


class ValueTable:
    """Optimal values and tie sets keyed by (counts key, remaining horizon).

    Leaf states (remaining 0) are not stored; their value is zero.
    """

    def __init__(self, prior: DiscretePrior, horizon: int, bandwidth: Number, sensing: int, exact: bool):
        self.prior = prior
        self.horizon = horizon
        self.bandwidth = bandwidth
        self.sensing = sensing
        self.exact = exact
        self._values: Dict[Tuple[CountsKey, int], Number] = {}
        self._ties: Dict[Tuple[CountsKey, int], Tuple[Action, ...]] = {}

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, state: Tuple[CountsKey, int]) -> bool:
        return state in self._values

    @property
    def zero(self) -> Number:
        return Fraction(0) if self.exact else 0.0

    def states(self) -> List[Tuple[CountsKey, int]]:
        return list(self._values)

    def value(self, counts: Union[ObservationCounts, CountsKey], remaining: int) -> Number:
        key = counts.key() if isinstance(counts, ObservationCounts) else counts
        if remaining == 0 and len(key) == self.prior.n_channels:
            return self.zero
        try:
            return self._values[(key, remaining)]
        except KeyError:
            raise UnknownState(f"state {key} with {remaining} slots remaining is not in the table") from None

    def ties(self, counts: Union[ObservationCounts, CountsKey], remaining: int) -> Tuple[Action, ...]:
        key = counts.key() if isinstance(counts, ObservationCounts) else counts
        try:
            return self._ties[(key, remaining)]
        except KeyError:
            raise UnknownState(f"state {key} with {remaining} slots remaining is not in the table") from None

    def _store(self, state: Tuple[CountsKey, int], value: Number, ties: Tuple[Action, ...]) -> None:
        self._values[state] = value
        self._ties[state] = ties


def _advance(key: CountsKey, action: Action, pattern: Tuple[int, ...]) -> CountsKey:
    counts = list(key)
    for channel, z in zip(action, pattern):
        x, y = counts[channel]
        counts[channel] = (x + z, y + 1)
    return tuple(counts)


class _Recursion:
    """Shared machinery for the optimality and policy-evaluation recursions."""

    def __init__(self, prior: DiscretePrior, bandwidth: Number, sensing: int, exact: bool):
        if not 1 <= sensing <= prior.n_channels:
            raise ValueError(f"sensing must be in [1, {prior.n_channels}], got {sensing}")
        self.exact = exact
        if exact:
            self.atoms = [tuple(a) for a in prior.atoms]
            self.bandwidth = as_number(bandwidth)
        else:
            self.atoms = [tuple(float(v) for v in a) for a in prior.atoms]
            self.bandwidth = float(bandwidth)
        self.one = Fraction(1) if exact else 1.0
        self.zero = Fraction(0) if exact else 0.0
        self.actions: List[Action] = list(itertools.combinations(range(prior.n_channels), sensing))
        self.patterns: List[Tuple[int, ...]] = list(itertools.product((1, 0), repeat=sensing))

    def initial_weights(self, prior: DiscretePrior) -> Tuple[Number, ...]:
        return tuple(prior.weights) if self.exact else tuple(float(w) for w in prior.weights)

    def branches(self, weights: Tuple[Number, ...], action: Action):
        """Yield (probability, pattern, child weights) for every outcome of
        sensing ``action`` that has positive probability."""
        for pattern in self.patterns:
            lik = []
            for atom, w in zip(self.atoms, weights):
                value = w
                for channel, z in zip(action, pattern):
                    value = value * (atom[channel] if z else self.one - atom[channel])
                lik.append(value)
            p = sum(lik, self.zero)
            if p > 0:
                yield p, pattern, tuple(v / p for v in lik)

    def expand(self, key: CountsKey, weights, actions: Sequence[Action], layer: Dict) -> None:
        """Add the children of ``key`` under every action in ``actions`` to ``layer``."""
        for action in actions:
            for _, pattern, child in self.branches(weights, action):
                layer.setdefault(_advance(key, action, pattern), child)

    def q_value(self, key: CountsKey, weights, remaining: int, action: Action, child_value) -> Number:
        q = self.zero
        for p, pattern, child in self.branches(weights, action):
            q += p * (self.bandwidth * sum(pattern) + child_value(_advance(key, action, pattern), child, remaining - 1))
        return q

    def close(self, a: Number, b: Number) -> bool:
        if self.exact:
            return a == b
        return abs(a - b) <= FLOAT_TOL * max(1.0, abs(a), abs(b))


def optimal_value(prior: DiscretePrior, horizon: int, bandwidth: Number = DEFAULT_BANDWIDTH,
                  sensing: int = 1, exact: bool = True,
                  state_cap: Optional[int] = None) -> Tuple[Number, ValueTable]:
    """V*(f, T) by backward induction over count states, with the table of
    optimal actions.

    The reachable states are enumerated layer by layer from the empty
    counts, then valued from the last layer back to the first, so the
    horizon is bounded by ``state_cap`` and never by the call stack.

    With ``sensing`` M > 1 the actions are M-subsets of channels and the
    reward counts every free channel in the subset.
    """
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    cap = DEFAULT_STATE_CAP if state_cap is None else state_cap
    rec = _Recursion(prior, bandwidth, sensing, exact)
    table = ValueTable(prior, horizon, rec.bandwidth, sensing, exact)
    root = ObservationCounts.zeros(prior.n_channels).key()
    if horizon == 0:
        return rec.zero, table

    layers = [{root: rec.initial_weights(prior)}]
    states = 1
    for _ in range(1, horizon):
        layer: Dict[CountsKey, Tuple[Number, ...]] = {}
        for key, weights in layers[-1].items():
            rec.expand(key, weights, rec.actions, layer)
        states += len(layer)
        if states > cap:
            raise StateSpaceExceeded(states, cap)
        layers.append(layer)

    def stored(key: CountsKey, weights, remaining: int) -> Number:
        return table.value(key, remaining)

    for depth in range(horizon - 1, -1, -1):
        remaining = horizon - depth
        for key, weights in layers.pop().items():
            q_values = [rec.q_value(key, weights, remaining, action, stored) for action in rec.actions]
            best = max(q_values)
            ties = tuple(a for a, q in zip(rec.actions, q_values) if rec.close(q, best))
            table._store((key, remaining), best, ties)
    logger.debug(f"Solved horizon {horizon} with {len(table)} states (exact={exact})")
    return table.value(root, horizon), table


def optimal_action(table: ValueTable, counts: Union[ObservationCounts, CountsKey],
                   remaining: int) -> Tuple[Union[int, Action], Tuple[Union[int, Action], ...]]:
    """Lowest-index optimal action at a state plus the full tie set.

    Single-channel sensing returns channel indices; M > 1 returns tuples.
    """
    ties = table.ties(counts, remaining)
    if table.sensing == 1:
        flat = tuple(a[0] for a in ties)
        return flat[0], flat
    return ties[0], ties


def policy_value(prior: DiscretePrior, horizon: int, bandwidth: Number, policy: Policy,
                 sensing: int = 1, exact: bool = True) -> Number:
    """Expected bits of a state-feedback policy; ties it returns are split
    uniformly.

    Only the states the policy reaches are enumerated, forward by layer;
    their values then follow backward from the last slot.
    """
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    rec = _Recursion(prior, bandwidth, sensing, exact)
    root = ObservationCounts.zeros(prior.n_channels).key()
    if horizon == 0:
        return rec.zero

    plans: List[Dict[CountsKey, Tuple[Tuple[Number, ...], List[Action]]]] = []
    frontier = {root: rec.initial_weights(prior)}
    for depth in range(horizon):
        remaining = horizon - depth
        plan = {}
        layer: Dict[CountsKey, Tuple[Number, ...]] = {}
        for key, weights in frontier.items():
            posterior = DiscretePrior(atoms=prior.atoms, weights=tuple(as_number(w) for w in weights))
            chosen = [a if isinstance(a, tuple) else (a,) for a in policy(posterior, remaining)]
            if not chosen:
                raise ValueError("policy returned no action")
            plan[key] = (weights, chosen)
            if remaining > 1:
                rec.expand(key, weights, chosen, layer)
        plans.append(plan)
        frontier = layer

    below: Dict[CountsKey, Number] = {}
    for depth in range(horizon - 1, -1, -1):
        remaining = horizon - depth

        def child_value(key: CountsKey, weights, left: int, below=below) -> Number:
            return below[key] if left else rec.zero

        values = {}
        for key, (weights, chosen) in plans.pop().items():
            total = sum((rec.q_value(key, weights, remaining, a, child_value) for a in chosen), rec.zero)
            values[key] = total / len(chosen)
        below = values
    return below[root]


def myopic_ties(prior: DiscretePrior) -> Tuple[int, ...]:
    """Channels with the largest posterior mean availability."""
    means = [expected_availability(prior, i) for i in range(prior.n_channels)]
    best = max(means)
    return tuple(i for i, m in enumerate(means) if m == best)


def myopic_policy(posterior: DiscretePrior, remaining: int) -> Tuple[int, ...]:
    return myopic_ties(posterior)


def myopic_bayes_action(prior: DiscretePrior, rng: np.random.Generator) -> int:
    """Channel with the highest posterior availability; ties uniform."""
    ties = myopic_ties(prior)
    if len(ties) == 1:
        return ties[0]
    return int(ties[rng.integers(len(ties))])


def static_value(prior: DiscretePrior, horizon: int, bandwidth: Number = DEFAULT_BANDWIDTH,
                 sensing: int = 1) -> Fraction:
    """Bits of sensing the a-priori best channels every slot, ignoring what is observed."""
    means = sorted((expected_availability(prior, i) for i in range(prior.n_channels)), reverse=True)
    return horizon * as_number(bandwidth) * sum(means[:sensing], Fraction(0))


def as_number(value: Number) -> Fraction:
    return value if isinstance(value, Fraction) else Fraction(repr(float(value)))


def history_tree_value(prior: DiscretePrior, horizon: int, bandwidth: Number = DEFAULT_BANDWIDTH) -> Fraction:
    """Best expected bits over every deterministic history-dependent strategy.

    Walks the full history tree with sequential ``posterior_update`` and no
    merging of histories; each node picks its own best channel, which is
    the same as maximizing over all strategy trees.
    """
    b = as_number(bandwidth)

    def best(posterior: DiscretePrior, remaining: int) -> Fraction:
        if remaining == 0:
            return Fraction(0)
        values = []
        for channel in range(posterior.n_channels):
            p_free = expected_availability(posterior, channel)
            total = Fraction(0)
            if p_free > 0:
                nxt = posterior_update(posterior, SensingOutcome(channel=channel, free=True))
                total += p_free * (b + best(nxt, remaining - 1))
            if p_free < 1:
                nxt = posterior_update(posterior, SensingOutcome(channel=channel, free=False))
                total += (1 - p_free) * best(nxt, remaining - 1)
            values.append(total)
        return max(values)

    return best(prior, horizon)


def policy_tree(table: ValueTable, max_depth: Optional[int] = None) -> dict:
    """Optimal decisions along every positive-probability history, as a
    nested dict with 1-based channel labels."""
    rec = _Recursion(table.prior, table.bandwidth, table.sensing, table.exact)
    depth_limit = table.horizon if max_depth is None else min(max_depth, table.horizon)

    def node(key: CountsKey, weights, remaining: int, depth: int) -> dict:
        action, ties = optimal_action(table, key, remaining)
        chosen = action if isinstance(action, tuple) else (action,)
        entry = {
            "slot": table.horizon - remaining + 1,
            "sense": [c + 1 for c in chosen],
            "ties": [[c + 1 for c in (t if isinstance(t, tuple) else (t,))] for t in ties],
            "value_bits": _render(table.value(key, remaining)),
        }
        if remaining > 1 and depth < depth_limit:
            children = {}
            for p, pattern, child in rec.branches(weights, chosen):
                label = ",".join("free" if z else "busy" for z in pattern)
                sub = node(_advance(key, chosen, pattern), child, remaining - 1, depth + 1)
                sub["probability"] = _render(p)
                children[label] = sub
            entry["next"] = children
        return entry

    if table.horizon == 0:
        return {}
    root = ObservationCounts.zeros(table.prior.n_channels).key()
    return node(root, rec.initial_weights(table.prior), table.horizon, 1)


def _render(value: Number):
    if isinstance(value, Fraction):
        return str(value) if value.denominator != 1 else value.numerator
    return float(value)


def symmetric_two_channel_action(xi: Number, rng: np.random.Generator) -> int:
    """Two-channel symmetric prior: channel 0 if xi > 1/2, channel 1 if xi < 1/2,
    uniform on exact balance."""
    if not 0 <= xi <= 1:
        raise ValueError(f"xi must lie in [0, 1], got {xi}")
    if xi > Fraction(1, 2):
        return 0
    if xi < Fraction(1, 2):
        return 1
    return int(rng.integers(2))


def symmetric_xi_update(xi: Number, theta_a: Number, theta_b: Number, outcome: SensingOutcome) -> Number:
    """Weight on delta(theta_a, theta_b) after one outcome, for the family
    xi*delta(theta_a, theta_b) + (1 - xi)*delta(theta_b, theta_a)."""
    if outcome.channel not in (0, 1):
        raise ValueError("symmetric family has exactly two channels")
    mine, other = (theta_a, theta_b) if outcome.channel == 0 else (theta_b, theta_a)
    if not outcome.free:
        mine, other = 1 - mine, 1 - other
    norm = xi * mine + (1 - xi) * other
    if norm == 0:
        raise ZeroLikelihood(f"outcome {outcome} impossible under the symmetric prior")
    return xi * mine / norm


def myopic_is_optimal(prior: DiscretePrior) -> bool:
    """Known sufficient conditions for the myopic rule on two channels and
    two atoms delta(a, b), delta(c, d)."""
    if prior.n_channels != 2 or prior.n_atoms != 2:
        raise ValueError("condition applies to two-channel, two-atom priors")
    (a, b), (c, d) = prior.atoms
    return (a + b == 1 and c + d == 1) or (a <= b and c <= d) or (a >= b and c >= d)


# Calibration against a known channel

def _predictive_tables(marginal_prior: DiscretePrior, horizon: int,
                       start: Tuple[int, int] = (0, 0)) -> List[np.ndarray]:
    """Posterior predictive free probability at every (depth n, successes s)
    reachable within ``horizon`` pulls, starting from ``start`` counts."""
    theta = marginal_prior.atoms_array()[:, 0]
    with np.errstate(divide="ignore"):
        log_w = np.log(marginal_prior.weights_array())
    s0, n0 = start
    tables = []
    for n in range(horizon):
        s = np.arange(n + 1)
        log_post = (log_w[:, None] + xlogy(s0 + s[None, :], theta[:, None])
                    + xlogy(n0 - s0 + n - s[None, :], 1.0 - theta[:, None]))
        with np.errstate(invalid="ignore", divide="ignore"):
            num = logsumexp(log_post, b=theta[:, None], axis=0)
            den = logsumexp(log_post, axis=0)
            p = np.exp(num - den)
        tables.append(np.where(np.isfinite(den), np.nan_to_num(p, nan=0.0), 0.0))
    return tables


def _continuation_gain(tables: List[np.ndarray], rate: float, discount: float) -> float:
    """max over stopping times tau >= 1 of E[sum_{j<tau} discount^j (Z_j - rate)]."""
    horizon = len(tables)
    cont = np.zeros(horizon + 1)
    for n in range(horizon - 1, -1, -1):
        p = tables[n]
        q = p - rate + discount * (p * cont[1:n + 2] + (1.0 - p) * cont[:n + 1])
        if n == 0:
            return float(q[0])
        cont = np.maximum(q, 0.0)
    return 0.0


def _calibrate(tables: List[np.ndarray], discount: float) -> float:
    def gain(rate: float) -> float:
        return _continuation_gain(tables, rate, discount)

    lo, hi = gain(0.0), gain(1.0)
    if lo <= 0.0:
        return 0.0
    if hi >= 0.0:
        return 1.0
    return float(optimize.brentq(gain, 0.0, 1.0, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=200))


def _check_single_channel(marginal_prior: DiscretePrior) -> None:
    if marginal_prior.n_channels != 1:
        raise ValueError(f"index needs a one-channel prior, got {marginal_prior.n_channels} channels")


def stopping_index(marginal_prior: DiscretePrior, horizon: int, state_cap: Optional[int] = None,
                   start: Tuple[int, int] = (0, 0)) -> float:
    """Largest ratio E[free slots up to tau] / E[tau] over deterministic
    stopping rules 1 <= tau <= horizon.

    A known channel with rate at or above this value is worth switching to
    for good.
    """
    _check_single_channel(marginal_prior)
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    cap = DEFAULT_STATE_CAP if state_cap is None else state_cap
    states = horizon * (horizon + 1) // 2
    if states > cap:
        raise StateSpaceExceeded(states, cap)
    return _calibrate(_predictive_tables(marginal_prior, horizon, start), 1.0)


def truncation_horizon(discount: float, truncation_eps: float) -> int:
    """Smallest T with discount**T < truncation_eps."""
    return max(1, int(math.floor(math.log(truncation_eps) / math.log(discount))) + 1)


def gittins_index(marginal_prior: DiscretePrior, discount: float,
                  truncation_eps: float = DEFAULT_TRUNCATION_EPS,
                  start: Tuple[int, int] = (0, 0)) -> float:
    """Discounted calibration index on a horizon truncated where
    discount**T < truncation_eps; error is O(truncation_eps / (1 - discount))."""
    _check_single_channel(marginal_prior)
    if not 0 < discount < 1:
        raise ValueError(f"discount must lie in (0, 1), got {discount}")
    if truncation_eps <= 0:
        raise ValueError(f"truncation_eps must be positive, got {truncation_eps}")
    horizon = truncation_horizon(discount, truncation_eps)
    return _calibrate(_predictive_tables(marginal_prior, horizon, start), discount)


def stopping_rule(marginal_prior: DiscretePrior, horizon: int, known_rate: float,
                  state_cap: Optional[int] = None) -> List[np.ndarray]:
    """Keep-sensing flags for the unknown channel against a known one.

    Entry ``[n][s]`` is True when, after n pulls with s free, staying on the
    unknown channel still beats switching for good (equivalently the
    stopping index of the posterior over the remaining horizon exceeds
    ``known_rate``).
    """
    _check_single_channel(marginal_prior)
    cap = DEFAULT_STATE_CAP if state_cap is None else state_cap
    states = horizon * (horizon + 1) // 2
    if states > cap:
        raise StateSpaceExceeded(states, cap)
    tables = _predictive_tables(marginal_prior, horizon)
    keep: List[np.ndarray] = [np.zeros(0, dtype=bool)] * horizon
    cont = np.zeros(horizon + 1)
    for n in range(horizon - 1, -1, -1):
        p = tables[n]
        q = p - known_rate + p * cont[1:n + 2] + (1.0 - p) * cont[:n + 1]
        keep[n] = q > FLOAT_TOL
        cont = np.maximum(q, 0.0)
    return keep


def known_channel(prior: DiscretePrior) -> Optional[int]:
    """Highest-index channel whose availability is the same in every atom
    with positive weight."""
    for channel in range(prior.n_channels - 1, -1, -1):
        values = {a[channel] for a, w in zip(prior.atoms, prior.weights) if w > 0}
        if len(values) == 1:
            return channel
    return None


def switch_is_absorbing(table: ValueTable, known: int) -> bool:
    """Whether, wherever sensing the known channel is optimal, it stays
    optimal after sensing it (single-channel tables only)."""
    if table.sensing != 1:
        raise ValueError("absorbing check applies to single-channel sensing")
    for key, remaining in table.states():
        if remaining < 2 or (known,) not in table.ties(key, remaining):
            continue
        for z in (1, 0):
            successor = (_advance(key, (known,), (z,)), remaining - 1)
            if successor in table and (known,) not in table.ties(*successor):
                return False
    return True
