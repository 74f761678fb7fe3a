""" Tests for the command line executable. """

import contextlib
import csv
import glob
import io
import json
import os
import unittest

import numpy as np
import pytest

from rpdp_fl.accountant import MechanismParams, fl_epsilon
from rpdp_fl.cmd import main
from rpdp_fl.cmd.run import build_dataset
from rpdp_fl.configfile import load_config
from rpdp_fl.flsim import RunConfig, run_mode
from rpdp_fl.metadata import MANIFEST

SMALL_RUN = """\
mechanism:
  rounds: 5
dataset:
  n_clients: 3
  n_per_client: 100
  n_features: 3
run:
  seeds: [0, 1]
  output_dir: small
"""


@contextlib.contextmanager
def capture_output():
    """
    Capture all of stdout and stderr, and return a StringIO.

    Note: using this means the output doesn't go to the real stdout. If you
    use the -s switch to see output, you won't see output inside this context.

    """
    output = io.StringIO()
    with contextlib.redirect_stdout(output):
        with contextlib.redirect_stderr(output):
            yield output


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


class CommandTest(unittest.TestCase):
    """Helpers for testing commands; every test runs in its own temporary directory."""

    def call_command(self, argv=None):
        """Call the rpdp_fl command and return its exit status."""
        self    # pylint: disable=pointless-statement
        return main.main(argv)

    def write_config(self, text, name="experiment.yaml"):
        with open(name, "w", encoding="utf-8") as f:
            f.write(text)
        return name

    def assert_file(self, filename, contains=None, not_contains=None):
        """Assert that a file exists, and optionally, contains some text."""
        self.assertTrue(os.path.isfile(filename))
        if contains is not None or not_contains is not None:
            with open(filename, encoding="utf-8") as f:
                text = f.read()
                if contains is not None:  # pragma: no branch
                    self.assertIn(contains, text)
                if not_contains is not None:  # pragma: no branch
                    self.assertNotIn(not_contains, text)

    def assert_not_file(self, filename):
        """Assert that a file doesn't exist."""
        self.assertFalse(os.path.isfile(filename))


class GroupTest(CommandTest):
    """Tests of the command group itself."""

    def test_unknown_subcommand(self):
        with capture_output() as output:
            self.assertEqual(2, self.call_command(["xyzzy"]))
        self.assertIn("No such command", output.getvalue())

    def test_version(self):
        with capture_output() as output:
            self.assertEqual(0, self.call_command(["--version"]))
        self.assertIn("rpdp_fl, version", output.getvalue())

    def test_missing_config(self):
        with capture_output() as output:
            self.assertEqual(2, self.call_command(["curves", "--config", "nope.yaml"]))
        self.assertIn("no config file 'nope.yaml'", output.getvalue())


class CurvesCommandTest(CommandTest):
    """Tests for the `curves` command."""

    def test_federated_and_centralized_curves(self):
        self.assertEqual(0, self.call_command(["curves", "--config", "privacy_curves", "--out", "curves"]))
        for name in ("rdp_curve.csv", "dp_curve.csv", "opt_eps_vs_q.csv", MANIFEST):
            self.assert_file(os.path.join("curves", name))
        rows = read_rows(os.path.join("curves", "opt_eps_vs_q.csv"))
        self.assertEqual({row["setting"] for row in rows}, {"federated", "centralized"})
        for setting in ("federated", "centralized"):
            eps = [float(row["eps_star"]) for row in rows if row["setting"] == setting]
            self.assertEqual(len(eps), 13)
            self.assertTrue(all(b > a for a, b in zip(eps, eps[1:])))
        rdp = read_rows(os.path.join("curves", "rdp_curve.csv"))
        self.assertEqual(len(rdp), 2 * 13 * 63)

    def test_single_q(self):
        path = self.write_config("curves:\n  q_values: [1.0]\nrun:\n  output_dir: one\n")
        self.assertEqual(0, self.call_command(["curves", "--config", path]))
        rows = read_rows(os.path.join("one", "opt_eps_vs_q.csv"))
        self.assertEqual(len(rows), 1)
        params = MechanismParams(sigma=1.0, delta=1e-3, tau=5, rounds=20, client_prob=0.5)
        expected = fl_epsilon(1.0, params)
        self.assertEqual(float(rows[0]["eps_star"]), expected.epsilon)
        self.assertEqual(int(rows[0]["alpha_star"]), expected.alpha_star)

    def test_sigma_sweep(self):
        self.assertEqual(0, self.call_command(["curves", "--config", "sigma_sweep", "--out", "sweep"]))
        rows = read_rows(os.path.join("sweep", "opt_eps_vs_q.csv"))
        by_q, by_sigma = {}, {}
        for row in rows:
            by_q.setdefault(row["q"], []).append((float(row["sigma"]), float(row["eps_star"])))
            by_sigma.setdefault(row["sigma"], []).append((float(row["q"]), float(row["eps_star"])))
        self.assertEqual(len(by_q), 13)
        for points in by_q.values():
            eps = [e for _, e in sorted(points)]
            self.assertEqual(len(eps), 4)
            self.assertTrue(all(b <= a for a, b in zip(eps, eps[1:])))
        self.assertEqual(len(by_sigma), 4)
        for points in by_sigma.values():
            eps = [e for _, e in sorted(points)]
            self.assertTrue(all(b > a for a, b in zip(eps, eps[1:])))

    def test_invalid_delta(self):
        path = self.write_config("mechanism:\n  delta: 2\n")
        with capture_output() as output:
            self.assertEqual(2, self.call_command(["curves", "--config", path]))
        self.assertIn("mechanism.delta", output.getvalue())
        self.assert_not_file(os.path.join("out", "opt_eps_vs_q.csv"))


class FitCommandTest(CommandTest):
    """Tests for the `fit` command."""

    def test_fit_writes_estimator(self):
        with capture_output() as output:
            self.assertEqual(0, self.call_command(["fit", "--config", "privacy_curves", "--out", "fit"]))
        self.assertRegex(output.getvalue(), r"R\^2 = 0\.99\d{4}|R\^2 = 1\.000000")
        with open(os.path.join("fit", "scf_fit.json"), encoding="utf-8") as f:
            fitted = json.load(f)
        self.assertEqual(set(fitted), {"a", "b", "c", "r_squared", "eps_full", "q_floor"})
        self.assertEqual(len(read_rows(os.path.join("fit", "scf_observations.csv"))), 100)

    def test_two_point_grid(self):
        path = self.write_config("fit:\n  q_grid: [0.5, 1.0]\n")
        with capture_output():
            self.assertEqual(3, self.call_command(["fit", "--config", path]))
        self.assert_not_file(os.path.join("out", "scf_fit.json"))


class RunCommandTest(CommandTest):
    """Tests for the `run` and `check` commands on a small federation."""

    def setUp(self):
        super().setUp()
        self.config = self.write_config(SMALL_RUN)

    def test_small_run(self):
        self.assertEqual(0, self.call_command(["run", "--config", self.config]))
        summary = read_rows(os.path.join("small", "summary.csv"))
        self.assertEqual(len(summary), 8)
        self.assertEqual(
            {(row["mode"], row["seed"]) for row in summary},
            {(mode, seed) for mode in ("rpdp", "minimum", "dropout", "privacy_free") for seed in ("0", "1")},
        )
        for row in summary:
            self.assertTrue(0.0 <= float(row["final_mean_accuracy"]) <= 1.0)

        ledgers = glob.glob(os.path.join("small", "ledger_*_seed*.csv"))
        self.assertEqual(len(ledgers), 8)
        for path in ledgers:
            for row in read_rows(path):
                self.assertLessEqual(float(row["spent_eps"]), float(row["budget_eps"]))

        with open(os.path.join("small", "metrics_rpdp_seed0.jsonl"), encoding="utf-8") as f:
            metrics = [json.loads(line) for line in f]
        self.assertEqual([m["round"] for m in metrics], [1, 2, 3, 4, 5])
        self.assertEqual(len(metrics[-1]["client_accuracy"]), 3)
        self.assert_file(os.path.join("small", "scf_fit.json"))

    def test_check_catches_tampering(self):
        self.assertEqual(0, self.call_command(["run", "--config", self.config, "--seed", "0"]))
        with capture_output() as output:
            self.assertEqual(0, self.call_command(["check", "small"]))
        self.assertEqual(output.getvalue(), "small is good\n")

        with open(os.path.join("small", "summary.csv"), "a", encoding="utf-8") as f:
            f.write("rpdp,9,1\n")
        with capture_output() as output:
            self.assertEqual(1, self.call_command(["check", "small"]))
        self.assertEqual(output.getvalue(), os.path.join("small", "summary.csv") + " has changed\n")

    def test_workers_do_not_change_outputs(self):
        self.assertEqual(0, self.call_command(["run", "--config", self.config, "--out", "one", "--workers", "1"]))
        self.assertEqual(0, self.call_command(["run", "--config", self.config, "--out", "three", "--workers", "3"]))
        for name in ("summary.csv", "ledger_rpdp_seed1.csv", "model_dropout_seed0.csv", "metrics_minimum_seed1.jsonl"):
            with open(os.path.join("one", name), "rb") as one, open(os.path.join("three", name), "rb") as three:
                self.assertEqual(one.read(), three.read())

    def test_ledger_every_round(self):
        path = self.write_config(SMALL_RUN + "  modes: [rpdp]\n  ledger_every_round: true\n", "rounds.yaml")
        self.assertEqual(0, self.call_command(["run", "--config", path, "--seed", "0"]))
        for round_index in range(1, 6):
            self.assert_file(os.path.join("small", f"ledger_rpdp_seed0_round{round_index}.csv"))
        self.assert_file(os.path.join("small", MANIFEST), contains="ledger_rpdp_seed0_round5.csv")

    def test_compare_binary_search(self):
        path = self.write_config(SMALL_RUN + "  modes: [privacy_free]\n", "timing.yaml")
        self.assertEqual(0, self.call_command(["run", "--config", path, "--seed", "0", "--compare-binary-search"]))
        with open(os.path.join("small", "timing.json"), encoding="utf-8") as f:
            timing = json.load(f)
        self.assertEqual(timing["budgets"], 1000)
        self.assertGreater(timing["binary_search_seconds"], timing["scf_seconds"])
        self.assert_file(os.path.join("small", MANIFEST), not_contains="timing.json")

    def test_data_error(self):
        path = self.write_config("dataset:\n  kind: csv\n  paths: [missing.csv]\n")
        with capture_output() as output:
            self.assertEqual(4, self.call_command(["run", "--config", path]))
        self.assertIn("cannot open missing.csv", output.getvalue())


@pytest.mark.slow
class SyntheticBenchmarkTest(CommandTest):
    """The synthetic benchmark: budgets are respected and personalization pays off."""

    def test_benchmark(self):
        self.assertEqual(0, self.call_command(["run", "--config", "synthetic_benchmark", "--out", "bench"]))
        for path in glob.glob(os.path.join("bench", "ledger_*_seed*.csv")):
            for row in read_rows(path):
                self.assertLessEqual(float(row["spent_eps"]), float(row["budget_eps"]))

        accuracy = {}
        for row in read_rows(os.path.join("bench", "summary.csv")):
            accuracy.setdefault(row["mode"], []).append(float(row["final_mean_accuracy"]))
        rpdp = np.array(accuracy["rpdp"])
        self.assertEqual(rpdp.size, 5)
        self.assertGreaterEqual(np.mean(accuracy["privacy_free"]), rpdp.mean())
        for baseline in ("minimum", "dropout"):
            other = np.array(accuracy[baseline])
            self.assertGreater(rpdp.mean(), other.mean())
            self.assertGreaterEqual(np.count_nonzero(rpdp > other), 4)


HEART_DISEASE_DIR = os.environ.get("RPDP_HEART_DISEASE_DIR")


@pytest.mark.skipif(not HEART_DISEASE_DIR, reason="RPDP_HEART_DISEASE_DIR is not set")
def test_heart_disease():
    config = load_config("heart_disease", {"dataset": {"paths": [
        os.path.join(HEART_DISEASE_DIR, f"{name}.csv") for name in ("cleveland", "hungarian", "switzerland", "long_beach")
    ]}})
    data = build_dataset(config, 0)
    assert data.sizes == [303, 261, 46, 130]
    result = run_mode(RunConfig(config.mechanism, config.run.learning_rate, mode="privacy_free"), data)
    assert result.final_accuracy >= 0.75
