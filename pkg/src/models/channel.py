"""Primary-network channel model: availability vectors, discrete priors and posteriors.

Channel ``i`` is free in a slot with probability ``theta_i``, independently
across channels and slots. The vector ``theta`` is fixed for a block and is
redrawn between blocks from a prior. Priors are finite mixtures of point
masses, so Bayesian updates are exact. Probabilities are stored as
``Fraction`` so worked examples reproduce exactly; ``as_array()`` gives the
float64 view used by the simulations.
"""
import logging
from collections import defaultdict
from fractions import Fraction
from typing import Annotated, Dict, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, field_validator, model_validator
from scipy.special import logsumexp, xlogy

from src.models.errors import ZeroLikelihood

logger = logging.getLogger(__name__)

WEIGHT_TOL = Fraction(1, 10**12)

CountsKey = Tuple[Tuple[int, int], ...]


def as_fraction(value: Union[Fraction, int, float, str]) -> Fraction:
    """Parse a probability given as a number or a "p/q" string.

    Floats go through their shortest repr, so 0.1 becomes 1/10.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError("probability must be numeric, not boolean")
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, float):
        if not np.isfinite(value):
            raise ValueError(f"probability must be finite, got {value}")
        return Fraction(repr(float(value)))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise ValueError(f"cannot interpret {value!r} as a probability")


def format_fraction(value: Fraction) -> Union[int, float, str]:
    """JSON-friendly form: integers stay integers, terminating decimals become
    floats, anything else is written as "p/q"."""
    if value.denominator == 1:
        return value.numerator
    if Fraction(repr(float(value))) == value:
        return float(value)
    return f"{value.numerator}/{value.denominator}"


Prob = Annotated[Fraction, BeforeValidator(as_fraction), PlainSerializer(format_fraction)]


def _check_unit_interval(values: Sequence[Fraction], what: str) -> None:
    for v in values:
        if v < 0 or v > 1:
            raise ValueError(f"{what} entries must lie in [0, 1], got {v}")


class ThetaVector(BaseModel):
    """Per-channel availability probabilities for one block."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: Tuple[Prob, ...] = Field(..., description="theta_i per channel")

    @field_validator("values")
    @classmethod
    def _valid(cls, values):
        if len(values) < 1:
            raise ValueError("theta needs at least one channel")
        _check_unit_interval(values, "theta")
        return values

    @classmethod
    def of(cls, values: Sequence[Union[Fraction, int, float, str]]) -> "ThetaVector":
        return cls(values=tuple(values))

    @property
    def n_channels(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.array([float(v) for v in self.values], dtype=np.float64)

    def best_channel(self) -> int:
        """Lowest-index channel with the largest theta."""
        return max(range(self.n_channels), key=lambda i: (self.values[i], -i))


class DiscretePrior(BaseModel):
    """Finite mixture of point masses over theta vectors.

    Weights within 1e-12 of summing to one are accepted and renormalized
    exactly; zero-weight atoms are kept so atom support never changes.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    atoms: Tuple[Tuple[Prob, ...], ...]
    weights: Tuple[Prob, ...]

    @model_validator(mode="after")
    def _valid(self):
        if not self.atoms:
            raise ValueError("prior needs at least one atom")
        if len(self.atoms) != len(self.weights):
            raise ValueError(f"{len(self.atoms)} atoms but {len(self.weights)} weights")
        width = len(self.atoms[0])
        if width < 1:
            raise ValueError("atoms need at least one channel")
        for atom in self.atoms:
            if len(atom) != width:
                raise ValueError("all atoms must have the same number of channels")
            _check_unit_interval(atom, "atom")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative")
        total = sum(self.weights, Fraction(0))
        if abs(total - 1) > WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1, got {float(total):.15g}")
        if total != 1:
            object.__setattr__(self, "weights", tuple(w / total for w in self.weights))
        return self

    @classmethod
    def of(cls, atoms: Sequence[Sequence], weights: Sequence) -> "DiscretePrior":
        return cls(atoms=tuple(tuple(a) for a in atoms), weights=tuple(weights))

    @classmethod
    def point_mass(cls, theta: Union[ThetaVector, Sequence]) -> "DiscretePrior":
        values = theta.values if isinstance(theta, ThetaVector) else tuple(theta)
        return cls(atoms=(tuple(values),), weights=(Fraction(1),))

    @property
    def n_channels(self) -> int:
        return len(self.atoms[0])

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def atom(self, index: int) -> ThetaVector:
        return ThetaVector(values=self.atoms[index])

    def atoms_array(self) -> np.ndarray:
        """Float view, shape (atoms, channels)."""
        return np.array([[float(v) for v in a] for a in self.atoms], dtype=np.float64)

    def weights_array(self) -> np.ndarray:
        return np.array([float(w) for w in self.weights], dtype=np.float64)


class SensingOutcome(BaseModel):
    """Result of sensing one channel in one slot."""
    model_config = ConfigDict(frozen=True)

    channel: int = Field(..., ge=0)
    free: bool


class HistoryEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    slot: int = Field(..., ge=1)
    outcomes: Tuple[SensingOutcome, ...]


class History(BaseModel):
    """Ordered record of what was sensed in each slot."""
    model_config = ConfigDict(frozen=True)

    entries: Tuple[HistoryEntry, ...] = ()
    sensing: int = Field(1, ge=1, description="Channels sensed per slot (M)")

    @model_validator(mode="after")
    def _ordered(self):
        previous = 0
        for entry in self.entries:
            if entry.slot <= previous:
                raise ValueError("history slots must be strictly increasing from 1")
            if len(entry.outcomes) > self.sensing:
                raise ValueError(f"slot {entry.slot} has more than {self.sensing} outcomes")
            previous = entry.slot
        return self

    def append(self, outcomes: Sequence[SensingOutcome]) -> "History":
        slot = self.entries[-1].slot + 1 if self.entries else 1
        entry = HistoryEntry(slot=slot, outcomes=tuple(outcomes))
        return History(entries=self.entries + (entry,), sensing=self.sensing)

    def counts(self, n_channels: int) -> "ObservationCounts":
        counts = ObservationCounts.zeros(n_channels)
        for entry in self.entries:
            for outcome in entry.outcomes:
                counts.record(outcome.channel, outcome.free)
        return counts


class ObservationCounts(BaseModel):
    """Per-channel (free_count X_i, sense_count Y_i).

    The only mutable domain value; owned by one strategy instance.
    """
    free: List[int]
    sensed: List[int]

    @model_validator(mode="after")
    def _consistent(self):
        if len(self.free) != len(self.sensed):
            raise ValueError("free and sensed counts must have the same length")
        for x, y in zip(self.free, self.sensed):
            if x < 0 or x > y:
                raise ValueError(f"counts must satisfy 0 <= X <= Y, got X={x}, Y={y}")
        return self

    @classmethod
    def zeros(cls, n_channels: int) -> "ObservationCounts":
        return cls(free=[0] * n_channels, sensed=[0] * n_channels)

    @classmethod
    def from_key(cls, key: CountsKey) -> "ObservationCounts":
        return cls(free=[x for x, _ in key], sensed=[y for _, y in key])

    @property
    def n_channels(self) -> int:
        return len(self.free)

    def record(self, channel: int, free: bool) -> None:
        self.sensed[channel] += 1
        if free:
            self.free[channel] += 1

    def key(self) -> CountsKey:
        """Canonical hashable form used to key value tables."""
        return tuple(zip(self.free, self.sensed))


def sample_theta(prior: DiscretePrior, rng: np.random.Generator) -> ThetaVector:
    """Draw the block's theta: atom ``a`` with probability ``weights[a]``."""
    index = int(rng.choice(prior.n_atoms, p=prior.weights_array()))
    return prior.atom(index)


def sample_slot(theta: ThetaVector, rng: np.random.Generator) -> List[bool]:
    """One slot of channel states; channel i is free with probability theta_i."""
    return [bool(z) for z in rng.random(theta.n_channels) < theta.as_array()]


def _likelihood(atom: Sequence[Fraction], channel: int, free: bool) -> Fraction:
    return atom[channel] if free else 1 - atom[channel]


def posterior_update(prior: DiscretePrior, outcome: SensingOutcome) -> DiscretePrior:
    """Bayes update of the atom weights after one sensing outcome."""
    if outcome.channel >= prior.n_channels:
        raise ValueError(f"channel {outcome.channel} out of range for {prior.n_channels} channels")
    raw = [w * _likelihood(a, outcome.channel, outcome.free) for a, w in zip(prior.atoms, prior.weights)]
    norm = sum(raw, Fraction(0))
    if norm == 0:
        state = "free" if outcome.free else "busy"
        raise ZeroLikelihood(f"channel {outcome.channel} observed {state} has zero probability under the prior")
    return DiscretePrior(atoms=prior.atoms, weights=tuple(r / norm for r in raw))


def log_posterior_weights(prior: DiscretePrior, counts: ObservationCounts) -> np.ndarray:
    """Normalized log-weights of the posterior; -inf marks excluded atoms."""
    if counts.n_channels != prior.n_channels:
        raise ValueError("counts and prior disagree on the number of channels")
    atoms = prior.atoms_array()
    x = np.asarray(counts.free, dtype=np.float64)
    y = np.asarray(counts.sensed, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_w = np.log(prior.weights_array())
    log_w = log_w + (xlogy(x, atoms) + xlogy(y - x, 1.0 - atoms)).sum(axis=1)
    norm = logsumexp(log_w)
    if not np.isfinite(norm):
        raise ZeroLikelihood(f"counts {counts.key()} have zero probability under the prior")
    return log_w - norm


def posterior_from_counts(prior: DiscretePrior, counts: ObservationCounts, exact: bool = True) -> DiscretePrior:
    """Posterior after any history with the given counts.

    ``exact=False`` goes through log-space floats, which survives long
    blocks where linear weights would underflow.
    """
    if counts.n_channels != prior.n_channels:
        raise ValueError("counts and prior disagree on the number of channels")
    if not exact:
        weights = np.exp(log_posterior_weights(prior, counts))
        weights = weights / weights.sum()
        return DiscretePrior(atoms=prior.atoms, weights=tuple(Fraction(float(w)) for w in weights))

    raw = []
    for atom, weight in zip(prior.atoms, prior.weights):
        value = weight
        for theta, x, y in zip(atom, counts.free, counts.sensed):
            if value == 0:
                break
            value *= theta**x * (1 - theta) ** (y - x)
        raw.append(value)
    norm = sum(raw, Fraction(0))
    if norm == 0:
        raise ZeroLikelihood(f"counts {counts.key()} have zero probability under the prior")
    return DiscretePrior(atoms=prior.atoms, weights=tuple(r / norm for r in raw))


def expected_availability(prior: DiscretePrior, channel: int) -> Fraction:
    """Posterior mean of theta_channel."""
    if not 0 <= channel < prior.n_channels:
        raise ValueError(f"channel {channel} out of range for {prior.n_channels} channels")
    return sum((w * a[channel] for a, w in zip(prior.atoms, prior.weights)), Fraction(0))


def marginal(prior: DiscretePrior, channel: int) -> DiscretePrior:
    """One-channel prior over theta_channel, merging equal atoms."""
    merged: Dict[Fraction, Fraction] = defaultdict(Fraction)
    for atom, weight in zip(prior.atoms, prior.weights):
        merged[atom[channel]] += weight
    values = sorted(merged)
    return DiscretePrior(atoms=tuple((v,) for v in values), weights=tuple(merged[v] for v in values))


def is_product(prior: DiscretePrior) -> bool:
    """True when the joint weights equal the product of the channel marginals."""
    marginals = [dict(zip((a[0] for a in marginal(prior, i).atoms), marginal(prior, i).weights))
                 for i in range(prior.n_channels)]
    joint: Dict[Tuple[Fraction, ...], Fraction] = defaultdict(Fraction)
    for atom, weight in zip(prior.atoms, prior.weights):
        joint[tuple(atom)] += weight
    support = 1
    for m in marginals:
        support *= sum(1 for w in m.values() if w > 0)
    if sum(1 for w in joint.values() if w > 0) != support:
        return False
    for atom, weight in joint.items():
        expected = Fraction(1)
        for i, value in enumerate(atom):
            expected *= marginals[i][value]
        if weight != expected:
            return False
    return True


def product_prior(marginals: Sequence[DiscretePrior]) -> DiscretePrior:
    """Joint prior of independent channels from one-channel marginals."""
    atoms: List[Tuple[Fraction, ...]] = [()]
    weights: List[Fraction] = [Fraction(1)]
    for m in marginals:
        atoms = [a + (v[0],) for a in atoms for v in m.atoms]
        weights = [w * mw for w in weights for mw in m.weights]
    return DiscretePrior(atoms=tuple(atoms), weights=tuple(weights))
