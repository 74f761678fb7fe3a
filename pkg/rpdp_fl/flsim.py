"""
FedAvg with DP-SGD and two-stage hybrid Poisson sampling.

Each round selects clients with probability λ; every selected client runs τ
DP-SGD steps over Poisson minibatches drawn with per-record probabilities,
and the server averages the returned weight deltas.  The per-client ledgers
pre-check and charge the records' privacy cost around every round.

The baselines only change how sampling probabilities are assigned:

* Minimum: everyone gets the probability of the smallest budget.
* Dropout: records below the mean budget are left out, everyone else gets
  the probability of the mean budget.
* PrivacyFree: plain FedAvg, no clipping, no noise, every record every step.
"""

import concurrent.futures
import dataclasses
import enum
import logging
import math

import numpy as np

from rpdp_fl.accountant import MechanismParams, Threat
from rpdp_fl.errors import ConfigError, DataError, InvariantError, PrivacyDomainError
from rpdp_fl.ledger import ClientLedger
from rpdp_fl.sampling import derive_stream, poisson_select, step_stream
from rpdp_fl.scf import binary_search_q, estimate_q_many, fit_estimator

LOG = logging.getLogger(__name__)


class Mode(enum.Enum):
    RPDP = "rpdp"
    MINIMUM = "minimum"
    DROPOUT = "dropout"
    PRIVACY_FREE = "privacy_free"


BASELINES = (Mode.MINIMUM, Mode.DROPOUT, Mode.PRIVACY_FREE)


class QSource(enum.Enum):
    SCF = "scf"
    BINARY_SEARCH = "binary_search"


@dataclasses.dataclass(frozen=True, eq=False)
class LogisticModel:
    """Multinomial logistic regression; weights are the flattened (features + bias) × classes matrix."""

    weights: np.ndarray
    n_features: int
    n_classes: int

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        if weights.size != (self.n_features + 1) * self.n_classes:
            raise DataError(f"{weights.size} weights do not fit {self.n_features} features and {self.n_classes} classes")
        if not np.all(np.isfinite(weights)):
            raise InvariantError("model weights are not finite")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def zeros(cls, n_features, n_classes):
        return cls(np.zeros((n_features + 1) * n_classes), n_features, n_classes)

    @property
    def dimension(self):
        return int(self.weights.size)

    def matrix(self, weights=None):
        weights = self.weights if weights is None else weights
        return weights.reshape(self.n_features + 1, self.n_classes)

    def check_features(self, features):
        if features.ndim != 2 or features.shape[1] != self.n_features:
            raise DataError(f"model expects {self.n_features} features, data has shape {features.shape}")

    def predict(self, features):
        self.check_features(features)
        return np.argmax(_augment(features) @ self.matrix(), axis=1)

    def updated(self, delta):
        return LogisticModel(self.weights + delta, self.n_features, self.n_classes)


def _augment(features):
    return np.hstack([features, np.ones((features.shape[0], 1))])


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def clipped_gradient_sum(model, weights, features, labels, clip):
    """
    Sum over examples of the cross-entropy gradient, each clipped to ℓ2 norm `clip`.

    The per-example gradient is x̃ ⊗ (p - y), whose norm factors as ‖x̃‖·‖p - y‖,
    so clipping never materialises the per-example matrices.
    """
    augmented = _augment(features)
    residual = _softmax(augmented @ model.matrix(weights))
    residual[np.arange(labels.shape[0]), labels] -= 1.0
    norms = np.linalg.norm(augmented, axis=1) * np.linalg.norm(residual, axis=1)
    with np.errstate(divide="ignore"):
        factors = np.minimum(1.0, clip / norms)
    factors[norms == 0] = 1.0
    return (augmented.T @ (factors[:, None] * residual)).reshape(-1)


@dataclasses.dataclass(frozen=True)
class SgdParams:
    """The local optimizer: τ steps of rate η, noise multiplier σ, clipping bound L."""

    tau: int
    learning_rate: float
    sigma: float
    clip: float

    def __post_init__(self):
        if int(self.tau) != self.tau or self.tau < 1:
            raise ConfigError(f"tau must be a positive integer, got {self.tau!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate!r}")
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be nonnegative, got {self.sigma!r}")
        if not self.clip > 0 or (self.sigma > 0 and math.isinf(self.clip)):
            raise ConfigError("clip must be positive, and finite whenever noise is added")


def local_update(model, features, labels, probs, params, streams):
    """
    τ DP-SGD steps on one client; returns x_after - x_before.

    `streams(r)` gives the random stream of step r.  Each step Poisson-selects a
    minibatch, clips every per-example gradient to L, adds N(0, σ²L²) noise to
    the sum, divides by the realised batch size and takes one step of rate η.
    An empty minibatch skips the step.
    """
    model.check_features(features)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (features.shape[0],) or labels.shape != (features.shape[0],):
        raise DataError("one label and one sampling probability per record are required")
    start = model.weights
    weights = start.copy()
    for step in range(params.tau):
        stream = streams(step)
        batch = poisson_select(probs, stream)
        if batch.size == 0:
            continue
        gradient = clipped_gradient_sum(model, weights, features[batch], labels[batch], params.clip)
        if params.sigma > 0:
            gradient = gradient + stream.normal(0.0, params.sigma * params.clip, gradient.size)
        gradient /= batch.size
        if not np.all(np.isfinite(gradient)):
            raise InvariantError(f"non-finite gradient at local step {step} with a batch of {batch.size}")
        weights -= params.learning_rate * gradient
    return weights - start


def aggregate(deltas, dimension):
    """Average of the selected clients' deltas; the zero delta when nobody was selected."""
    if not deltas:
        return np.zeros(dimension)
    if any(delta.shape != (dimension,) for delta in deltas):
        raise DataError("client deltas disagree on the model dimension")
    return np.mean(np.stack(deltas), axis=0)


def evaluate(model, features, labels):
    """Fraction of correct argmax predictions."""
    if labels.shape[0] == 0:
        raise DataError("cannot evaluate on an empty test split")
    return float(np.mean(model.predict(features) == labels))


def evaluate_per_class(model, features, labels):
    """Accuracy restricted to each label present in the split."""
    if labels.shape[0] == 0:
        raise DataError("cannot evaluate on an empty test split")
    correct = model.predict(features) == labels
    return {int(label): float(np.mean(correct[labels == label])) for label in np.unique(labels)}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """One training run."""

    params: MechanismParams
    learning_rate: float
    mode: Mode = Mode.RPDP
    q_source: QSource = QSource.SCF
    explicit_q: float = None
    seed: int = 0
    eval_every: int = 1
    workers: int = 1
    q_grid: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "q_source", QSource(self.q_source))
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate!r}")
        if self.explicit_q is not None and not 0 <= self.explicit_q <= 1:
            raise ConfigError(f"explicit q must be in [0, 1], got {self.explicit_q!r}")
        if int(self.eval_every) != self.eval_every or self.eval_every < 1:
            raise ConfigError(f"eval_every must be a positive integer, got {self.eval_every!r}")
        if int(self.workers) != self.workers or self.workers < 1:
            raise ConfigError(f"workers must be a positive integer, got {self.workers!r}")

    @property
    def needs_fit(self):
        return self.mode is not Mode.PRIVACY_FREE and self.explicit_q is None and self.q_source is QSource.SCF

    def sgd_params(self):
        if self.mode is Mode.PRIVACY_FREE:
            return SgdParams(self.params.tau, self.learning_rate, sigma=0.0, clip=math.inf)
        return SgdParams(self.params.tau, self.learning_rate, sigma=self.params.sigma, clip=self.params.clip)


@dataclasses.dataclass(frozen=True)
class RoundMetrics:
    """Telemetry of one global round; accuracies are None on rounds that were not evaluated."""

    round: int
    selected_clients: tuple
    active_records: tuple
    client_accuracy: tuple = None
    mean_accuracy: float = None
    ledger_snapshot: str = None

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class RunResult:
    mode: Mode
    metrics: list
    model: LogisticModel
    ledgers: list
    fit: object = None

    @property
    def final_accuracy(self):
        evaluated = [m.mean_accuracy for m in self.metrics if m.mean_accuracy is not None]
        return evaluated[-1] if evaluated else None


def _probabilities_for(budgets, config, fit):
    """Sampling probabilities of the given budgets under the configured source."""
    budgets = np.asarray(budgets, dtype=np.float64)
    if config.explicit_q is not None:
        return np.full(budgets.shape, float(config.explicit_q))
    if config.q_source is QSource.SCF:
        return estimate_q_many(fit, budgets)
    probs = np.zeros(budgets.shape)
    for index, eps in enumerate(budgets):
        try:
            probs[index] = binary_search_q(float(eps), config.params)
        except PrivacyDomainError:
            probs[index] = 0.0
    return probs


def assign_probabilities(data, config, fit, mode):
    """Per-client (probabilities, active mask) over the training records."""
    budgets = [shard.train_budgets for shard in data.clients]
    if mode is Mode.PRIVACY_FREE:
        return [(np.ones(b.shape), np.ones(b.shape, dtype=bool)) for b in budgets]
    if mode is Mode.RPDP:
        assigned = []
        for b in budgets:
            probs = _probabilities_for(b, config, fit)
            assigned.append((probs, np.ones(b.shape, dtype=bool)))
        return assigned
    everything = np.concatenate(budgets)
    if mode is Mode.MINIMUM:
        uniform = float(_probabilities_for([everything.min()], config, fit)[0])
        return [(np.full(b.shape, uniform), np.ones(b.shape, dtype=bool)) for b in budgets]
    mean = float(everything.mean())
    uniform = float(_probabilities_for([mean], config, fit)[0])
    assigned = []
    for b in budgets:
        kept = b >= mean
        assigned.append((np.where(kept, uniform, 0.0), kept))
    LOG.info("dropout: %d of %d records fall below the mean budget %.6g", int((everything < mean).sum()), everything.size, mean)
    return assigned


def _evaluate_clients(model, data):
    return tuple(evaluate(model, shard.test_features, shard.test_labels) for shard in data.clients)


def _run(config, data, mode, fit=None, on_round=None):
    params = config.params
    if data.clients and any(np.isinf(shard.train_budgets).any() for shard in data.clients) and mode is not Mode.PRIVACY_FREE:
        raise DataError("every training record needs a finite budget before a private run")
    run_config = dataclasses.replace(config, mode=mode)
    if fit is None and run_config.needs_fit:
        fit, _ = fit_estimator(params, config.q_grid, workers=config.workers)

    ledgers = []
    for client, (shard, (probs, active)) in enumerate(zip(data.clients, assign_probabilities(data, run_config, fit, mode))):
        ledgers.append(
            ClientLedger(
                shard.train_budgets, probs, params,
                active=active, client_id=client, charging=mode is not Mode.PRIVACY_FREE,
            )
        )
        never = int(np.count_nonzero(probs[active] == 0))
        if never:
            LOG.warning("client %d: %d records have budgets below the estimator range and are never sampled", client, never)

    sgd = run_config.sgd_params()
    model = LogisticModel.zeros(data.n_features, data.n_classes)
    n_clients = len(data.clients)
    metrics = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=config.workers) as pool:
        for round_index in range(1, params.rounds + 1):
            selection_stream = derive_stream(config.seed, ["round", round_index, "clients"])
            selected = [int(c) for c in poisson_select(np.full(n_clients, params.client_prob), selection_stream)]
            charged = range(n_clients) if params.threat is Threat.CLIENT else selected
            for client in charged:
                ledgers[client].precheck_round()

            def train(client, round_index=round_index):
                shard = data.clients[client]
                return local_update(
                    model,
                    shard.train_features,
                    shard.train_labels,
                    ledgers[client].sampling_probs(),
                    sgd,
                    lambda step: step_stream(config.seed, client, round_index, step),
                )

            deltas = list(pool.map(train, selected))
            model = model.updated(aggregate(deltas, model.dimension))
            for client in charged:
                ledgers[client].charge_round()

            record = RoundMetrics(
                round=round_index,
                selected_clients=tuple(selected),
                active_records=tuple(ledger.active_count for ledger in ledgers),
            )
            if round_index % config.eval_every == 0 or round_index == params.rounds:
                accuracies = _evaluate_clients(model, data)
                record = dataclasses.replace(
                    record, client_accuracy=accuracies, mean_accuracy=float(np.mean(accuracies))
                )
            if on_round is not None:
                record = on_round(record, ledgers) or record
            LOG.debug("%s round %d: clients %s, mean accuracy %s", mode.value, round_index, selected, record.mean_accuracy)
            metrics.append(record)

    for ledger in ledgers:
        ledger.check()
    return RunResult(mode=mode, metrics=metrics, model=model, ledgers=ledgers, fit=fit)


def run_rpdp_fl(config, data, *, fit=None, on_round=None):
    """Train with record-level personalized sampling probabilities."""
    return _run(config, data, Mode.RPDP, fit=fit, on_round=on_round)


def run_baseline(config, data, mode, *, fit=None, on_round=None):
    """Train one of the Minimum, Dropout or PrivacyFree baselines."""
    mode = Mode(mode)
    if mode not in BASELINES:
        raise ConfigError(f"{mode.value} is not a baseline")
    return _run(config, data, mode, fit=fit, on_round=on_round)


def run_mode(config, data, *, fit=None, on_round=None):
    """Dispatch on `config.mode`."""
    if config.mode is Mode.RPDP:
        return run_rpdp_fl(config, data, fit=fit, on_round=on_round)
    return run_baseline(config, data, config.mode, fit=fit, on_round=on_round)
