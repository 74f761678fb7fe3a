"""
Personalized privacy-budget assignments.

Each distribution is a small frozen dataclass with a `sample(n, stream)`
method.  Bounded distributions reject out-of-range draws and redraw them, so
every produced budget lies in [lower, upper].
"""

import dataclasses
import logging
import math

import numpy as np

from rpdp_fl.errors import ConfigError, DataError

LOG = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-9
MAX_REJECTION_PASSES = 10_000


def _check_weights(weights, count):
    if len(weights) != count:
        raise ConfigError(f"expected {count} weights, got {len(weights)}")
    if any(w < 0 for w in weights) or abs(sum(weights) - 1) > WEIGHT_TOLERANCE:
        raise ConfigError(f"weights must be nonnegative and sum to 1, got {tuple(weights)}")


def _check_bounds(lower, upper):
    if not 0 < lower < upper:
        raise ConfigError(f"bounds must satisfy 0 < lower < upper, got [{lower}, {upper}]")


def _redraw(values, reject, draw):
    """Replace rejected entries by fresh draws until none are rejected."""
    bad = np.flatnonzero(reject(values))
    passes = 0
    while bad.size:
        passes += 1
        if passes > MAX_REJECTION_PASSES:
            raise ConfigError("rejection sampling does not terminate; are the bounds reachable?")
        values[bad] = draw(bad)
        bad = bad[reject(values[bad])]
    return values


@dataclasses.dataclass(frozen=True)
class ThreeLevels:
    """Three budget levels taken with fixed proportions."""

    levels: tuple = (0.1, 1.0, 5.0)
    weights: tuple = (0.7, 0.2, 0.1)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.levels) != 3 or any(v <= 0 for v in self.levels) or list(self.levels) != sorted(self.levels):
            raise ConfigError(f"three positive ascending levels are required, got {self.levels}")
        _check_weights(self.weights, 3)

    def sample(self, n, stream):
        return np.array(self.levels)[stream.categorical(self.weights, n)]


@dataclasses.dataclass(frozen=True)
class BoundedPareto:
    """Pareto(shape, scale=lower) truncated to [lower, upper] by rejection."""

    shape: float = 1.0
    lower: float = 0.1
    upper: float = 10.0

    def __post_init__(self):
        if not self.shape > 0:
            raise ConfigError(f"Pareto shape must be positive, got {self.shape}")
        _check_bounds(self.lower, self.upper)

    def sample(self, n, stream):
        def draw(index):
            return self.lower * (1.0 + stream.pareto(self.shape, len(index)))

        return _redraw(draw(np.arange(n)), lambda v: v > self.upper, draw)


@dataclasses.dataclass(frozen=True)
class BoundedMixGauss:
    """
    A three-component Gaussian mixture truncated to [lower, upper].

    `spreads` are variances unless `spread_is_variance` is False, in which
    case they are standard deviations.  A rejected draw is redrawn from the
    same component, so the mixture weights survive truncation.
    """

    means: tuple = (0.1, 1.0, 5.0)
    spreads: tuple = (0.01, 0.05, 0.5)
    weights: tuple = (0.7, 0.2, 0.1)
    lower: float = 0.1
    upper: float = 10.0
    spread_is_variance: bool = True

    def __post_init__(self):
        for name in ("means", "spreads", "weights"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if len(self.means) != 3 or any(m <= 0 for m in self.means):
            raise ConfigError(f"three positive means are required, got {self.means}")
        if len(self.spreads) != 3 or any(s <= 0 for s in self.spreads):
            raise ConfigError(f"three positive spreads are required, got {self.spreads}")
        _check_weights(self.weights, 3)
        _check_bounds(self.lower, self.upper)

    @property
    def stds(self):
        if self.spread_is_variance:
            return tuple(math.sqrt(s) for s in self.spreads)
        return self.spreads

    def sample(self, n, stream):
        components = stream.categorical(self.weights, n)
        means = np.array(self.means)[components]
        stds = np.array(self.stds)[components]

        def draw(index):
            return means[index] + stds[index] * stream.normal(0.0, 1.0, len(index))

        return _redraw(draw(np.arange(n)), lambda v: (v < self.lower) | (v > self.upper), draw)


@dataclasses.dataclass(frozen=True)
class PerLabel:
    """A fixed budget per class label."""

    mapping: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if not self.mapping:
            raise ConfigError("a per-label budget mapping needs at least one label")
        if any(not float(eps) > 0 for eps in self.mapping.values()):
            raise ConfigError(f"per-label budgets must be positive, got {self.mapping}")

    def sample(self, n, stream):
        raise ConfigError("per-label budgets are assigned from labels, not sampled")


KINDS = {
    "three_levels": ThreeLevels,
    "bounded_pareto": BoundedPareto,
    "bounded_mix_gauss": BoundedMixGauss,
    "per_label": PerLabel,
}


def dist_spec_from_dict(data):
    """Build a distribution from its config section (`kind` plus its fields)."""
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in KINDS:
        raise ConfigError(f"budgets.kind must be one of {sorted(KINDS)}, got {kind!r}")
    cls = KINDS[kind]
    allowed = {field.name for field in dataclasses.fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys for budgets of kind {kind}: {', '.join('budgets.' + k for k in unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid budgets section: {exc}") from exc


def sample_budgets(spec, n, stream):
    """`n` budgets drawn from `spec` using `stream`."""
    if int(n) != n or n < 1:
        raise ConfigError(f"number of budgets must be a positive integer, got {n!r}")
    return np.asarray(spec.sample(int(n), stream), dtype=np.float64)


def assign_by_label(labels, mapping):
    """Look each label up in `mapping`; keys may be the label itself or its string form."""
    budgets = []
    for position, label in enumerate(labels):
        key = label.item() if isinstance(label, np.generic) else label
        if key in mapping:
            budgets.append(float(mapping[key]))
        elif str(key) in mapping:
            budgets.append(float(mapping[str(key)]))
        else:
            raise DataError(f"label {key!r} of record {position} has no budget in the mapping")
    return np.array(budgets, dtype=np.float64)
