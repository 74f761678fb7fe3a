"""Tests of rpdp_fl.artifacts and rpdp_fl.metadata."""

import json
import os

import numpy as np
import pytest

from rpdp_fl.artifacts import ArtifactWriter, dumps, format_value, validate_manifest
from rpdp_fl.errors import DataError
from rpdp_fl.metadata import MANIFEST, artifact_name, lookup


@pytest.mark.parametrize("value, text", [
    (0.1, "0.10000000000000001"),
    (1.0, "1"),
    (np.float64(2.5), "2.5"),
    (3, "3"),
    (np.int64(7), "7"),
    (True, "true"),
    (np.bool_(False), "false"),
    (None, ""),
    (float("inf"), "inf"),
    ("rpdp", "rpdp"),
])
def test_format_value(value, text):
    assert format_value(value) == text


def test_dumps_is_canonical():
    assert dumps({"b": np.float64(1.5), "a": np.arange(2)}) == '{"a": [0, 1], "b": 1.5}'
    with pytest.raises(ValueError):
        dumps({"a": float("nan")})


@pytest.mark.parametrize("name, columns", [
    ("ledger_rpdp_seed0.csv", ("client_id", "record_id", "budget_eps", "q", "spent_eps", "active")),
    ("ledger_rpdp_seed0_round12.csv", ("client_id", "record_id", "budget_eps", "q", "spent_eps", "active")),
    ("model_dropout_seed3.csv", ("index", "weight")),
    ("summary.csv", ("mode", "seed", "final_mean_accuracy")),
])
def test_lookup(name, columns):
    assert lookup(name).columns == columns


def test_lookup_unknown():
    assert lookup("notes.txt") is None
    with pytest.raises(KeyError):
        artifact_name("notes_{seed}.txt", seed=1)


def test_artifact_name():
    assert artifact_name("metrics_{mode}_seed{seed}.jsonl", mode="rpdp", seed=2) == "metrics_rpdp_seed2.jsonl"


def write_some(out_dir="out"):
    writer = ArtifactWriter(out_dir)
    writer.write_csv("summary.csv", [("rpdp", 0, 0.875), ("minimum", 0, None)])
    writer.write_json("scf_fit.json", {"a": 1.0})
    writer.write_json("timing.json", {"speedup": 30.0})
    writer.write_manifest()
    return writer


def test_writer_output():
    writer = write_some()
    with open(writer.path("summary.csv"), encoding="utf-8") as f:
        assert f.read() == "mode,seed,final_mean_accuracy\nrpdp,0,0.875\nminimum,0,\n"
    with open(writer.path("scf_fit.json"), encoding="utf-8") as f:
        assert json.load(f) == {"a": 1.0}
    assert writer.written == ["summary.csv", "scf_fit.json"]


def test_writer_rejects_unknown_and_ragged():
    writer = ArtifactWriter("out")
    with pytest.raises(DataError):
        writer.write_json("notes.json", {})
    with pytest.raises(DataError):
        writer.write_csv("summary.csv", [("rpdp", 0)])


def test_manifest_is_good():
    write_some()
    assert validate_manifest("out") == []


def test_manifest_skips_timing():
    write_some()
    with open(os.path.join("out", MANIFEST), encoding="utf-8") as f:
        text = f.read()
    assert "timing.json" not in text
    with open(os.path.join("out", "timing.json"), "w", encoding="utf-8") as f:
        f.write("{}\n")
    assert validate_manifest("out") == []


def test_changed_file():
    write_some()
    with open(os.path.join("out", "summary.csv"), "a", encoding="utf-8") as f:
        f.write("dropout,0,1\n")
    assert validate_manifest("out") == [os.path.join("out", "summary.csv") + " has changed"]


def test_missing_file():
    write_some()
    os.remove(os.path.join("out", "scf_fit.json"))
    assert validate_manifest("out") == [os.path.join("out", "scf_fit.json") + " doesn't exist"]


def test_edited_manifest():
    write_some()
    path = os.path.join("out", MANIFEST)
    with open(path, encoding="utf-8") as f:
        text = f.read()
    with open(path, "w", encoding="utf-8") as f:
        f.write(text.replace("summary.csv", "summary2.csv"))
    assert validate_manifest("out") == [f"{path} seems to have been edited"]


def test_no_manifest():
    os.makedirs("empty")
    assert validate_manifest("empty") == [os.path.join("empty", MANIFEST) + " doesn't exist"]


def test_empty_manifest():
    ArtifactWriter("nothing").write_manifest()
    assert validate_manifest("nothing") == []
