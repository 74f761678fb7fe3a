"""
Federated datasets: synthetic generation, CSV ingestion and partitioning.

Every client shard is split into train and test records and z-scored with
statistics of its own train split only.
"""

import csv
import dataclasses
import enum
import logging
import math

import numpy as np

from rpdp_fl.errors import DataError
from rpdp_fl.sampling import derive_stream

LOG = logging.getLogger(__name__)

DEFAULT_TRAIN_FRACTION = 0.66
BUDGET_COLUMN = "epsilon"


class PartitionMode(enum.Enum):
    IID = "iid"
    NON_IID = "non_iid"


@dataclasses.dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-feature z-scoring; constant features pass through unscaled."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features):
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        constant = std == 0
        if np.any(constant):
            LOG.warning("features %s are constant and are left unscaled", np.flatnonzero(constant).tolist())
        return cls(mean=np.where(constant, 0.0, mean), scale=np.where(constant, 1.0, std))

    def apply(self, features):
        return (features - self.mean) / self.scale


@dataclasses.dataclass(eq=False)
class ClientShard:
    """One client's records: z-scored features, labels, budgets and the train/test split."""

    features: np.ndarray
    labels: np.ndarray
    budgets: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    standardizer: Standardizer = None

    def __post_init__(self):
        n = self.labels.shape[0]
        if self.features.ndim != 2 or self.features.shape[0] != n or self.budgets.shape != (n,):
            raise DataError("features, labels and budgets must describe the same records")
        if not np.all(self.budgets > 0):
            raise DataError("every record budget must be positive")
        covered = np.concatenate([self.train_idx, self.test_idx])
        if np.intersect1d(self.train_idx, self.test_idx).size or not np.array_equal(np.sort(covered), np.arange(n)):
            raise DataError("train and test indices must be disjoint and cover every record")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def train_features(self):
        return self.features[self.train_idx]

    @property
    def train_labels(self):
        return self.labels[self.train_idx]

    @property
    def train_budgets(self):
        return self.budgets[self.train_idx]

    @property
    def test_features(self):
        return self.features[self.test_idx]

    @property
    def test_labels(self):
        return self.labels[self.test_idx]


@dataclasses.dataclass(eq=False)
class FederatedDataset:
    """M client shards over a shared feature space and label set."""

    clients: list
    n_classes: int

    def __post_init__(self):
        if not self.clients:
            raise DataError("a federated dataset needs at least one client")
        widths = {shard.features.shape[1] for shard in self.clients}
        if len(widths) != 1:
            raise DataError(f"clients disagree on the number of features: {sorted(widths)}")

    @property
    def n_features(self):
        return int(self.clients[0].features.shape[1])

    @property
    def sizes(self):
        return [len(shard) for shard in self.clients]

    def with_budgets(self, budgets):
        """A copy with per-record budgets replaced, one array per client."""
        if len(budgets) != len(self.clients):
            raise DataError(f"{len(budgets)} budget vectors for {len(self.clients)} clients")
        return FederatedDataset(
            clients=[
                dataclasses.replace(shard, budgets=np.asarray(b, dtype=np.float64))
                for shard, b in zip(self.clients, budgets)
            ],
            n_classes=self.n_classes,
        )


@dataclasses.dataclass(eq=False)
class RecordPool:
    """Raw records before they are split across clients."""

    features: np.ndarray
    labels: np.ndarray
    budgets: np.ndarray = None

    def __len__(self):
        return int(self.labels.shape[0])


def _split(n, stream, train_fraction):
    if n < 2:
        raise DataError(f"a client needs at least 2 records to split into train and test, got {n}")
    order = stream.permutation(n)
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def make_shard(features, labels, stream, *, budgets=None, train_fraction=DEFAULT_TRAIN_FRACTION):
    """Split raw records and z-score them with the train split's statistics."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    train_idx, test_idx = _split(labels.shape[0], stream, train_fraction)
    standardizer = Standardizer.fit(features[train_idx])
    if budgets is None:
        # Unassigned budgets are unconstrained until `with_budgets` replaces them.
        budgets = np.full(labels.shape[0], np.inf)
    return ClientShard(
        features=standardizer.apply(features),
        labels=labels,
        budgets=np.asarray(budgets, dtype=np.float64),
        train_idx=train_idx,
        test_idx=test_idx,
        standardizer=standardizer,
    )


def _check_count(name, value, minimum=1):
    if int(value) != value or value < minimum:
        raise DataError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def _centroids(n_classes, n_features, separation, stream):
    """Class centres at pairwise distance `separation` when the space allows it."""
    directions = stream.normal(0.0, 1.0, (max(n_classes, n_features), n_features))
    if n_classes <= n_features:
        basis, _ = np.linalg.qr(directions[:n_features].T)
        return basis.T[:n_classes] * separation / math.sqrt(2)
    directions = directions[:n_classes]
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return directions * separation / 2


def generate_pool(n_records, n_features, n_classes, separation, stream):
    """Gaussian class clusters with unit spread around separated centroids."""
    n_records = _check_count("n_records", n_records)
    n_features = _check_count("n_features", n_features)
    n_classes = _check_count("n_classes", n_classes)
    if not separation >= 0:
        raise DataError(f"separation must be nonnegative, got {separation!r}")
    centroids = _centroids(n_classes, n_features, separation, stream)
    labels = stream.categorical(np.full(n_classes, 1.0 / n_classes), n_records)
    features = centroids[labels] + stream.normal(0.0, 1.0, (n_records, n_features))
    return RecordPool(features=features, labels=labels)


def generate_synthetic(
    n_clients, n_per_client, n_features, n_classes, separation, stream, *, train_fraction=DEFAULT_TRAIN_FRACTION
):
    """A synthetic federation where every client draws from the same class clusters."""
    n_clients = _check_count("n_clients", n_clients)
    n_per_client = _check_count("n_per_client", n_per_client, 2)
    pool = generate_pool(n_clients * n_per_client, n_features, n_classes, separation, stream)
    shards = []
    for client in range(n_clients):
        rows = slice(client * n_per_client, (client + 1) * n_per_client)
        shards.append(make_shard(pool.features[rows], pool.labels[rows], stream, train_fraction=train_fraction))
    return FederatedDataset(clients=shards, n_classes=int(n_classes))


def _read_client_csv(path, label_column, budget_column):
    """Rows of one client file as (features, labels, budgets or None, feature names)."""
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path} is empty")
        header = [name.strip() for name in header]
        if label_column not in header:
            raise DataError(f"{path} has no label column {label_column!r}")
        label_at = header.index(label_column)
        budget_at = header.index(budget_column) if budget_column in header else None
        feature_at = [i for i in range(len(header)) if i not in (label_at, budget_at)]

        features, labels, budgets = [], [], []
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{row_number}: expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(field) for field in row]
            except ValueError as exc:
                raise DataError(f"{path}:{row_number}: non-numeric value ({exc})") from exc
            label = values[label_at]
            if label != int(label) or label < 0:
                raise DataError(f"{path}:{row_number}: label {row[label_at]!r} is not a nonnegative integer")
            labels.append(int(label))
            features.append([values[i] for i in feature_at])
            if budget_at is not None:
                budgets.append(values[budget_at])
    if not labels:
        raise DataError(f"{path} has a header but no records")
    return (
        np.array(features, dtype=np.float64).reshape(len(labels), len(feature_at)),
        np.array(labels, dtype=np.int64),
        np.array(budgets, dtype=np.float64) if budget_at is not None else None,
        [header[i] for i in feature_at],
    )


def load_pool(paths, label_column, *, budget_column=BUDGET_COLUMN):
    """All CSV files concatenated into one pool of raw records."""
    parts = [_read_client_csv(path, label_column, budget_column) for path in paths]
    if not parts:
        raise DataError("no CSV files given")
    if len({tuple(names) for *_, names in parts}) != 1:
        raise DataError("CSV files disagree on their feature columns")
    has_budgets = [budgets is not None for _, _, budgets, _ in parts]
    return RecordPool(
        features=np.vstack([features for features, *_ in parts]),
        labels=np.concatenate([labels for _, labels, _, _ in parts]),
        budgets=np.concatenate([budgets for _, _, budgets, _ in parts]) if all(has_budgets) else None,
    )


def load_csv(paths, label_column, *, budget_column=BUDGET_COLUMN, stream=None, train_fraction=DEFAULT_TRAIN_FRACTION):
    """One client per CSV file, with an optional per-record `epsilon` column."""
    if stream is None:
        stream = derive_stream(0, ["csv", "split"])
    shards, n_classes, widths = [], 0, set()
    for path in paths:
        features, labels, budgets, names = _read_client_csv(path, label_column, budget_column)
        widths.add(tuple(names))
        n_classes = max(n_classes, int(labels.max()) + 1)
        shards.append(make_shard(features, labels, stream, budgets=budgets, train_fraction=train_fraction))
    if not shards:
        raise DataError("no CSV files given")
    if len(widths) != 1:
        raise DataError("CSV files disagree on their feature columns")
    LOG.info("loaded %d clients with sizes %s", len(shards), [len(shard) for shard in shards])
    return FederatedDataset(clients=shards, n_classes=max(n_classes, 2))


def partition(pool, n_clients, mode, stream, *, train_fraction=DEFAULT_TRAIN_FRACTION, n_classes=None):
    """
    Split a pool across `n_clients`.

    IID deals a random permutation into equal shards.  Non-IID sorts by label,
    cuts 2·n_clients contiguous shards and deals two random shards per client.
    """
    n_clients = _check_count("n_clients", n_clients)
    mode = PartitionMode(mode)
    if len(pool) < 2 * n_clients:
        raise DataError(f"a pool of {len(pool)} records is too small for {n_clients} clients")
    if mode is PartitionMode.IID:
        parts = np.array_split(stream.permutation(len(pool)), n_clients)
    else:
        shards = np.array_split(np.argsort(pool.labels, kind="stable"), 2 * n_clients)
        dealt = stream.permutation(2 * n_clients)
        parts = [np.concatenate([shards[dealt[2 * i]], shards[dealt[2 * i + 1]]]) for i in range(n_clients)]
    clients = [
        make_shard(
            pool.features[rows],
            pool.labels[rows],
            stream,
            budgets=None if pool.budgets is None else pool.budgets[rows],
            train_fraction=train_fraction,
        )
        for rows in (np.sort(part) for part in parts)
    ]
    if n_classes is None:
        n_classes = max(int(pool.labels.max()) + 1, 2)
    return FederatedDataset(clients=clients, n_classes=n_classes)
