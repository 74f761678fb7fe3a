"""The rpdp_fl run command."""

import dataclasses
import logging
import time

import click
import numpy as np

from rpdp_fl.artifacts import ArtifactWriter
from rpdp_fl.cmd.options import experiment_options
from rpdp_fl.datagen import generate_pool, generate_synthetic, load_csv, load_pool, partition
from rpdp_fl.errors import PrivacyDomainError
from rpdp_fl.flsim import Mode, RunConfig, evaluate_per_class, run_mode
from rpdp_fl.metadata import artifact_name
from rpdp_fl.prefs import BoundedMixGauss, PerLabel, assign_by_label, sample_budgets
from rpdp_fl.sampling import derive_stream
from rpdp_fl.scf import binary_search_q, estimate_q_many, fit_estimator

LOG = logging.getLogger(__name__)

TIMING_BUDGETS = 1000


def build_dataset(config, seed):
    """The federated dataset of one seed, with every training record's budget assigned."""
    spec = config.dataset
    stream = derive_stream(seed, ["dataset"])
    if spec.kind == "synthetic":
        if spec.partition == "none":
            data = generate_synthetic(
                spec.n_clients, spec.n_per_client, spec.n_features, spec.n_classes, spec.separation, stream,
                train_fraction=spec.train_fraction,
            )
        else:
            pool = generate_pool(
                spec.n_clients * spec.n_per_client, spec.n_features, spec.n_classes, spec.separation, stream
            )
            data = partition(
                pool, spec.n_clients, spec.partition, stream,
                train_fraction=spec.train_fraction, n_classes=spec.n_classes,
            )
    elif spec.partition == "none":
        data = load_csv(
            spec.paths, spec.label_column,
            budget_column=spec.budget_column, stream=stream, train_fraction=spec.train_fraction,
        )
    else:
        pool = load_pool(spec.paths, spec.label_column, budget_column=spec.budget_column)
        data = partition(pool, spec.n_clients, spec.partition, stream, train_fraction=spec.train_fraction)

    budgets = []
    for client, shard in enumerate(data.clients):
        if np.all(np.isfinite(shard.budgets)):
            # Budgets that came with the data win over the configured distribution.
            budgets.append(shard.budgets)
        elif isinstance(config.budgets, PerLabel):
            budgets.append(assign_by_label(shard.labels, config.budgets.mapping))
        else:
            budgets.append(sample_budgets(config.budgets, len(shard), derive_stream(seed, ["budgets", client])))
    return data.with_budgets(budgets)


def _timing_budgets(config):
    spec = config.budgets if not isinstance(config.budgets, PerLabel) else BoundedMixGauss()
    return sample_budgets(spec, TIMING_BUDGETS, derive_stream(config.run.seeds[0], ["timing"]))


def time_assignment(config):
    """Wall-clock seconds to assign probabilities to the same budgets by SCF and by bisection."""
    budgets = _timing_budgets(config)
    params = config.mechanism

    start = time.perf_counter()
    fit, _ = fit_estimator(params, config.fit.q_grid, workers=config.fit.workers)
    scf_q = estimate_q_many(fit, budgets)
    scf_seconds = time.perf_counter() - start

    start = time.perf_counter()
    search_q = np.zeros_like(budgets)
    for index, eps in enumerate(budgets):
        try:
            search_q[index] = binary_search_q(float(eps), params)
        except PrivacyDomainError:
            search_q[index] = 0.0
    search_seconds = time.perf_counter() - start

    LOG.info("SCF took %.3fs and binary search %.3fs for %d budgets", scf_seconds, search_seconds, budgets.size)
    return {
        "budgets": int(budgets.size),
        "scf_seconds": scf_seconds,
        "binary_search_seconds": search_seconds,
        "speedup": search_seconds / scf_seconds if scf_seconds > 0 else None,
        "max_q_difference": float(np.max(np.abs(scf_q - search_q))),
    }


def _ledger_rows(ledgers):
    return [row for ledger in ledgers for row in ledger.rows()]


def _per_class_rows(result, data):
    rows = []
    for client, shard in enumerate(data.clients):
        for label, accuracy in evaluate_per_class(result.model, shard.test_features, shard.test_labels).items():
            rows.append((client, label, accuracy))
    return rows


def run_experiment(config, writer):
    """Every configured mode for every seed; returns the summary rows."""
    fit = None
    summary = []
    for seed in config.run.seeds:
        data = build_dataset(config, seed)
        LOG.info("seed %d: %d clients with %s records", seed, len(data.clients), data.sizes)
        for mode_name in config.run.modes:
            run_config = RunConfig(
                params=config.mechanism,
                learning_rate=config.run.learning_rate,
                mode=mode_name,
                q_source=config.run.q_source,
                explicit_q=config.run.explicit_q,
                seed=seed,
                eval_every=config.run.eval_every,
                workers=config.run.workers,
                q_grid=config.fit.q_grid,
            )
            if fit is None and run_config.needs_fit:
                fit, _ = fit_estimator(
                    config.mechanism, config.fit.q_grid, setting=config.fit.setting, workers=config.fit.workers
                )
                writer.write_json("scf_fit.json", fit.to_dict())

            on_round = None
            if config.run.ledger_every_round and run_config.mode is not Mode.PRIVACY_FREE:

                def on_round(record, ledgers, mode=mode_name, seed=seed):
                    name = artifact_name(
                        "ledger_{mode}_seed{seed}_round{round}.csv", mode=mode, seed=seed, round=record.round
                    )
                    writer.write_csv(name, _ledger_rows(ledgers))
                    return dataclasses.replace(record, ledger_snapshot=name)

            result = run_mode(run_config, data, fit=fit, on_round=on_round)
            fields = {"mode": mode_name, "seed": seed}
            writer.write_jsonl(
                artifact_name("metrics_{mode}_seed{seed}.jsonl", **fields), [m.to_dict() for m in result.metrics]
            )
            writer.write_csv(artifact_name("ledger_{mode}_seed{seed}.csv", **fields), _ledger_rows(result.ledgers))
            writer.write_csv(
                artifact_name("model_{mode}_seed{seed}.csv", **fields), list(enumerate(result.model.weights))
            )
            writer.write_csv(artifact_name("per_class_{mode}_seed{seed}.csv", **fields), _per_class_rows(result, data))
            LOG.info("%s seed %d: final mean accuracy %.4f", mode_name, seed, result.final_accuracy)
            summary.append((mode_name, seed, result.final_accuracy))
    return summary


@click.command("run")
@experiment_options
@click.option(
    "--compare-binary-search",
    is_flag=True,
    default=False,
    help=f"Also time SCF against per-budget binary search on {TIMING_BUDGETS} budgets (timing.json).",
)
def run_command(config, compare_binary_search):
    """
    Train rPDP-FL and the baselines for every seed and write metrics, ledgers and summary.csv.
    """
    writer = ArtifactWriter(config.run.output_dir)
    summary = run_experiment(config, writer)
    writer.write_csv("summary.csv", summary)
    if compare_binary_search:
        writer.write_json("timing.json", time_assignment(config))
    writer.write_manifest()
    return 0
