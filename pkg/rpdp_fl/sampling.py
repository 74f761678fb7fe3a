"""
Seed-derived random streams and Poisson sampling.

There is no global generator.  Every logical task (a client's local step, a
round's client selection, a budget draw) derives its own stream from the
master seed and a label path, so results do not depend on scheduling.
"""

import dataclasses
import hashlib
import json
import numbers

import numpy as np

from rpdp_fl.errors import ConfigError, PrivacyDomainError


@dataclasses.dataclass
class RngStream:
    """A reproducible stream of draws keyed by 256 bits of seed material."""

    key: int
    position: int = 0
    _generator: np.random.Generator = dataclasses.field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.key)))

    def _advance(self, size):
        self.position += int(np.prod(size)) if np.ndim(size) else int(size)

    def uniform(self, size):
        """Uniform doubles in [0, 1)."""
        self._advance(size)
        return self._generator.random(size)

    def normal(self, loc, scale, size):
        self._advance(size)
        return self._generator.normal(loc, scale, size)

    def pareto(self, shape, size):
        """Lomax draws; `lower * (1 + draw)` is a classical Pareto with scale `lower`."""
        self._advance(size)
        return self._generator.pareto(shape, size)

    def permutation(self, n):
        self._advance(n)
        return self._generator.permutation(n)

    def categorical(self, weights, size):
        """Indices drawn with the given (normalized) weights."""
        cumulative = np.cumsum(np.asarray(weights, dtype=np.float64))
        picks = np.searchsorted(cumulative, self.uniform(size) * cumulative[-1], side="right")
        return np.minimum(picks, len(cumulative) - 1)


def _label(value):
    if isinstance(value, str):
        return value
    if isinstance(value, numbers.Integral):
        return int(value)
    raise ConfigError(f"stream labels must be strings or integers, got {value!r}")


def derive_stream(master_seed, labels=()):
    """A stream that depends only on the master seed and the label path."""
    payload = json.dumps([_label(master_seed), *(_label(label) for label in labels)], separators=(",", ":"))
    digest = hashlib.sha256(payload.encode("utf8")).digest()
    return RngStream(key=int.from_bytes(digest, "big"))


def step_stream(master_seed, client, round_index, step):
    """The stream a client uses for one local DP-SGD step."""
    return derive_stream(master_seed, ["client", client, "round", round_index, "step", step])


def poisson_select(probs, stream):
    """Indices whose independent Bernoulli(probs[i]) draw succeeds, in increasing order."""
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    if np.any(~((probs >= 0) & (probs <= 1))):
        raise PrivacyDomainError("sampling probabilities must be in [0, 1]")
    return np.flatnonzero(stream.uniform(probs.size) < probs)
