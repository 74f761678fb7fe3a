"""Tests of rpdp_fl.sampling."""

import math

import numpy as np
import pytest

from rpdp_fl.errors import ConfigError, PrivacyDomainError
from rpdp_fl.sampling import derive_stream, poisson_select, step_stream


def test_streams_are_reproducible():
    first = derive_stream(42, ["round", 3, "clients"]).uniform(10)
    again = derive_stream(42, ["round", 3, "clients"]).uniform(10)
    assert np.array_equal(first, again)


@pytest.mark.parametrize("other", [
    (43, ["round", 3, "clients"]),
    (42, ["round", 4, "clients"]),
    (42, ["round", "3", "clients"]),
    (42, ["round", 3]),
])
def test_labels_separate_streams(other):
    first = derive_stream(42, ["round", 3, "clients"]).uniform(10)
    assert not np.array_equal(first, derive_stream(*other).uniform(10))


def test_step_stream_labels():
    assert step_stream(7, 2, 5, 1).key == derive_stream(7, ["client", 2, "round", 5, "step", 1]).key


def test_position_counts_draws():
    stream = derive_stream(1)
    stream.uniform(5)
    stream.normal(0.0, 1.0, (2, 3))
    assert stream.position == 11


def test_bad_labels():
    with pytest.raises(ConfigError):
        derive_stream(1, [1.5])


def test_poisson_select_edges():
    stream = derive_stream(3)
    assert poisson_select([], stream).size == 0
    assert poisson_select(np.zeros(100), stream).size == 0
    assert poisson_select(np.ones(100), stream).tolist() == list(range(100))


@pytest.mark.parametrize("probs", [[0.5, 1.5], [-0.1], [np.nan]])
def test_poisson_select_domain(probs):
    with pytest.raises(PrivacyDomainError):
        poisson_select(probs, derive_stream(3))


def test_inclusion_frequencies():
    probs = np.array([0.01, 0.5, 0.99])
    rounds = 10_000
    counts = np.zeros(3)
    for r in range(rounds):
        counts[poisson_select(probs, derive_stream(11, ["round", r]))] += 1
    band = 3 * np.sqrt(rounds * probs * (1 - probs))
    assert np.all(np.abs(counts - rounds * probs) <= band)


def test_selection_is_bit_identical_under_repeated_seeds():
    probs = np.linspace(0.0, 1.0, 257)
    runs = [[poisson_select(probs, derive_stream(5, ["round", r])).tolist() for r in range(20)] for _ in range(2)]
    assert runs[0] == runs[1]


def test_categorical_weights():
    picks = derive_stream(9).categorical([0.7, 0.2, 0.1], 20_000)
    freq = np.bincount(picks, minlength=3) / picks.size
    assert np.allclose(freq, [0.7, 0.2, 0.1], atol=0.02)
    assert math.isclose(freq.sum(), 1.0)
