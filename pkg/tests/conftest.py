"""Shared builders for the test suite.

Random generators are drawn with strictly positive off-diagonals so
irreducibility holds by construction, and perturbed copies are produced
by convex interpolation, which keeps them valid and gives exact control
of the l1 distance.
"""

import numpy as np
import pytest

from regimelab.ratematrix import RateMatrix, l1_distance, validate


def random_generator(rng: np.random.Generator, n: int, scale: float = 1.0) -> RateMatrix:
    """Random irreducible conservative generator with rates in (0, scale]."""
    raw = rng.uniform(0.05, 1.0, size=(n, n)) * scale
    np.fill_diagonal(raw, 0.0)
    np.fill_diagonal(raw, -raw.sum(axis=1))
    return validate(raw)


def interpolate_to_delta(q: RateMatrix, q_other: RateMatrix, delta: float) -> RateMatrix:
    """Generator at exact l1 distance delta from q, toward q_other.

    Convex combinations of generators are generators, so any
    delta <= l1_distance(q, q_other) is reachable exactly.
    """
    gap = l1_distance(q, q_other)
    if delta > gap:
        raise ValueError(f"delta {delta} exceeds available distance {gap}")
    c = delta / gap
    return validate((1.0 - c) * q.entries + c * q_other.entries)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def two_state():
    return validate([[-1.0, 1.0], [2.0, -2.0]])


@pytest.fixture
def three_state():
    return validate(
        [[-1.5, 1.0, 0.5], [0.4, -1.0, 0.6], [0.7, 0.3, -1.0]]
    )
