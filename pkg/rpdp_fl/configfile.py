"""
Experiment config files.

A config is the packaged `defaults.yaml` with the user's YAML merged on top,
then any command-line overrides.  The merged tree is validated into frozen
dataclasses before anything is computed; unknown keys are errors.
"""

import dataclasses
import importlib.resources
import logging
import os.path

import yaml

from rpdp_fl.accountant import MechanismParams, orders_up_to
from rpdp_fl.errors import ConfigError
from rpdp_fl.prefs import dist_spec_from_dict

LOG = logging.getLogger(__name__)


def merge_configs(main, tweaks):
    """
    Merge `tweaks` into `main` in place and return it.

    Nested mappings merge key by key.  A key ending in "+" appends its list to
    the list already in `main`.
    """
    for key, value in tweaks.items():
        if key.endswith("+"):
            key = key[:-1]
            value = list(main.get(key) or []) + list(value)
        elif isinstance(value, dict) and isinstance(main.get(key), dict):
            value = merge_configs(dict(main[key]), value)
        main[key] = value
    return main


def get_file_content(filename):
    """Text of a file shipped in rpdp_fl/files."""
    return importlib.resources.files("rpdp_fl").joinpath(f"files/{filename}").read_text(encoding="utf-8")


def packaged_configs():
    """Names of the example configs shipped with the package."""
    names = []
    for entry in importlib.resources.files("rpdp_fl").joinpath("files").iterdir():
        if entry.name.endswith(".yaml") and entry.name != "defaults.yaml":
            names.append(entry.name[: -len(".yaml")])
    return sorted(names)


def _parse_yaml(text, source):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source} must contain a mapping at the top level")
    return data


def read_config_text(path):
    """The raw config tree of `path`, or of a packaged example if no such file exists."""
    if os.path.exists(path):
        with open(path, encoding="utf-8") as f:
            return _parse_yaml(f.read(), path)
    name = os.path.basename(path)
    if name.endswith(".yaml"):
        name = name[: -len(".yaml")]
    if name in packaged_configs():
        LOG.debug("using packaged config %s", name)
        return _parse_yaml(get_file_content(f"{name}.yaml"), f"<packaged {name}>")
    raise ConfigError(f"no config file {path!r}, and no packaged config by that name")


def _check_known_keys(raw, defaults, prefix=""):
    for key, value in raw.items():
        bare = key[:-1] if key.endswith("+") else key
        dotted = f"{prefix}{bare}"
        if bare not in defaults:
            raise ConfigError(f"unknown config key {dotted!r}")
        if dotted == "budgets":
            continue
        if isinstance(value, dict) and isinstance(defaults[bare], dict):
            _check_known_keys(value, defaults[bare], prefix=dotted + ".")


def _as_float(value):
    """A YAML scalar as a float, or None if it is not numeric."""
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return None
    return None


class _Section:
    """Typed access to one config section with dotted names in errors."""

    def __init__(self, tree, name):
        self.name = name
        self.data = tree.get(name) or {}
        if not isinstance(self.data, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")

    def _fail(self, key, expected, value):
        raise ConfigError(f"{self.name}.{key} must be {expected}, got {value!r}")

    def get(self, key):
        return self.data.get(key)

    def number(self, key, minimum=None, maximum=None, open_low=False, open_high=False):
        raw = self.data.get(key)
        # YAML 1.1 reads exponents without a dot, like 1e-3, as strings.
        value = _as_float(raw)
        if value is None:
            self._fail(key, "a number", raw)
        if minimum is not None and (value < minimum or (open_low and value == minimum)):
            self._fail(key, f"{'>' if open_low else '>='} {minimum}", value)
        if maximum is not None and (value > maximum or (open_high and value == maximum)):
            self._fail(key, f"{'<' if open_high else '<='} {maximum}", value)
        return value

    def integer(self, key, minimum=None):
        value = self.data.get(key)
        if isinstance(value, bool) or not isinstance(value, int):
            self._fail(key, "an integer", value)
        if minimum is not None and value < minimum:
            self._fail(key, f">= {minimum}", value)
        return value

    def boolean(self, key):
        value = self.data.get(key)
        if not isinstance(value, bool):
            self._fail(key, "true or false", value)
        return value

    def choice(self, key, choices):
        value = self.data.get(key)
        if value not in choices:
            self._fail(key, f"one of {', '.join(choices)}", value)
        return value

    def string(self, key, optional=False):
        value = self.data.get(key)
        if value is None and optional:
            return None
        if not isinstance(value, str):
            self._fail(key, "a string", value)
        return value

    def numbers(self, key, optional=False):
        value = self.data.get(key)
        if value is None and optional:
            return None
        if not isinstance(value, list):
            self._fail(key, "a list of numbers", value)
        converted = [_as_float(v) for v in value]
        if any(v is None for v in converted):
            self._fail(key, "a list of numbers", value)
        return tuple(converted)


@dataclasses.dataclass(frozen=True)
class DatasetSpec:
    kind: str
    n_clients: int
    n_per_client: int
    n_features: int
    n_classes: int
    separation: float
    partition: str
    paths: tuple
    label_column: str
    budget_column: str
    train_fraction: float


@dataclasses.dataclass(frozen=True)
class RunSpec:
    modes: tuple
    seeds: tuple
    learning_rate: float
    eval_every: int
    output_dir: str
    workers: int
    q_source: str
    explicit_q: float
    ledger_every_round: bool


@dataclasses.dataclass(frozen=True)
class CurvesSpec:
    q_values: tuple
    sigmas: tuple
    centralized: bool


@dataclasses.dataclass(frozen=True)
class FitSpec:
    q_grid: tuple
    setting: str
    workers: int


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment config."""

    mechanism: MechanismParams
    budgets: object
    dataset: DatasetSpec
    run: RunSpec
    curves: CurvesSpec
    fit: FitSpec


def _mechanism(tree):
    section = _Section(tree, "mechanism")
    return MechanismParams(
        sigma=section.number("sigma", 0, open_low=True),
        clip=section.number("clip", 0, open_low=True),
        delta=section.number("delta", 0, 1, open_low=True, open_high=True),
        tau=section.integer("tau", 1),
        rounds=section.integer("rounds", 1),
        client_prob=section.number("client_prob", 0, 1, open_low=True),
        orders=orders_up_to(section.integer("max_order", 2)),
        threat=section.choice("threat", ("server", "client")),
    )


def _dataset(tree):
    section = _Section(tree, "dataset")
    kind = section.choice("kind", ("synthetic", "csv"))
    paths = section.get("paths") or []
    if not isinstance(paths, list) or any(not isinstance(p, str) for p in paths):
        raise ConfigError(f"dataset.paths must be a list of file paths, got {paths!r}")
    if kind == "csv" and not paths:
        raise ConfigError("dataset.paths must name at least one CSV file when dataset.kind is csv")
    return DatasetSpec(
        kind=kind,
        n_clients=section.integer("n_clients", 1),
        n_per_client=section.integer("n_per_client", 2),
        n_features=section.integer("n_features", 1),
        n_classes=section.integer("n_classes", 1),
        separation=section.number("separation", 0),
        partition=section.choice("partition", ("none", "iid", "non_iid")),
        paths=tuple(paths),
        label_column=section.string("label_column"),
        budget_column=section.string("budget_column"),
        train_fraction=section.number("train_fraction", 0, 1, open_low=True, open_high=True),
    )


MODES = ("rpdp", "minimum", "dropout", "privacy_free")


def _run(tree):
    section = _Section(tree, "run")
    modes = section.get("modes")
    if not isinstance(modes, list) or not modes or any(m not in MODES for m in modes):
        raise ConfigError(f"run.modes must be a non-empty list drawn from {', '.join(MODES)}, got {modes!r}")
    seeds = section.get("seeds")
    if not isinstance(seeds, list) or not seeds or any(isinstance(s, bool) or not isinstance(s, int) for s in seeds):
        raise ConfigError(f"run.seeds must be a non-empty list of integers, got {seeds!r}")
    explicit_q = section.get("explicit_q")
    if explicit_q is not None:
        explicit_q = section.number("explicit_q", 0, 1)
    return RunSpec(
        modes=tuple(modes),
        seeds=tuple(seeds),
        learning_rate=section.number("learning_rate", 0, open_low=True),
        eval_every=section.integer("eval_every", 1),
        output_dir=section.string("output_dir"),
        workers=section.integer("workers", 1),
        q_source=section.choice("q_source", ("scf", "binary_search")),
        explicit_q=explicit_q,
        ledger_every_round=section.boolean("ledger_every_round"),
    )


def _curves(tree):
    section = _Section(tree, "curves")
    q_values = section.numbers("q_values")
    if not q_values or any(not 0 <= q <= 1 for q in q_values):
        raise ConfigError(f"curves.q_values must be a non-empty list of probabilities, got {list(q_values)}")
    sigmas = section.numbers("sigmas")
    if any(s <= 0 for s in sigmas):
        raise ConfigError(f"curves.sigmas must be positive, got {list(sigmas)}")
    return CurvesSpec(q_values=q_values, sigmas=sigmas, centralized=section.boolean("centralized"))


def _fit(tree):
    section = _Section(tree, "fit")
    return FitSpec(
        q_grid=section.numbers("q_grid", optional=True),
        setting=section.choice("setting", ("federated", "centralized")),
        workers=section.integer("workers", 1),
    )


def validate(tree):
    """Turn a merged config tree into an `ExperimentConfig`."""
    budgets = tree.get("budgets")
    if not isinstance(budgets, dict):
        raise ConfigError("config section 'budgets' must be a mapping")
    return ExperimentConfig(
        mechanism=_mechanism(tree),
        budgets=dist_spec_from_dict(budgets),
        dataset=_dataset(tree),
        run=_run(tree),
        curves=_curves(tree),
        fit=_fit(tree),
    )


def load_config(path=None, overrides=None):
    """Read, merge and validate the config at `path` (or a packaged example name; None for the defaults)."""
    defaults = _parse_yaml(get_file_content("defaults.yaml"), "<packaged defaults>")
    raw = read_config_text(path) if path else {}
    _check_known_keys(raw, defaults)
    tree = merge_configs(defaults, raw)
    if isinstance(raw.get("budgets"), dict) and "kind" in raw["budgets"]:
        # A new budget kind replaces the default section instead of merging into it.
        tree["budgets"] = dict(raw["budgets"])
    if overrides:
        tree = merge_configs(tree, overrides)
    return validate(tree)
