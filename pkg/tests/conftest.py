"""Shared fixtures for the test suite."""
from fractions import Fraction

import numpy as np
import pytest

from src.models.channel import DiscretePrior


@pytest.fixture
def example_prior() -> DiscretePrior:
    """4/5 delta(0.1, 0) + 1/5 delta(0.8, 1)."""
    return DiscretePrior.of([[Fraction(1, 10), 0], [Fraction(4, 5), 1]], [Fraction(4, 5), Fraction(1, 5)])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


def random_two_atom(rng: np.random.Generator, known_second: bool = False) -> DiscretePrior:
    """Two channels, two atoms, probabilities in tenths."""
    a, b, c, d = (Fraction(int(v), 10) for v in rng.integers(0, 11, size=4))
    if known_second:
        d = b
    w = Fraction(int(rng.integers(1, 10)), 10)
    return DiscretePrior.of([[a, b], [c, d]], [w, 1 - w])
