"""
Information about the files rpdp_fl writes.
"""

import dataclasses
import fnmatch
import re

from rpdp_fl.ledger import LEDGER_COLUMNS


@dataclasses.dataclass(frozen=True)
class Metadata:
    format: str
    columns: tuple = ()
    # Payload files are reproducible byte for byte and go into the manifest.
    payload: bool = True


MANIFEST = "MANIFEST.sha1"

CURVE_COLUMNS = ("setting", "sigma", "q")

KNOWN_FILES = {
    "rdp_curve.csv": Metadata(format="csv", columns=CURVE_COLUMNS + ("alpha", "rho")),
    "dp_curve.csv": Metadata(format="csv", columns=CURVE_COLUMNS + ("alpha", "eps")),
    "opt_eps_vs_q.csv": Metadata(format="csv", columns=CURVE_COLUMNS + ("eps_star", "alpha_star")),
    "scf_fit.json": Metadata(format="json", columns=("a", "b", "c", "r_squared", "eps_full", "q_floor")),
    "scf_observations.csv": Metadata(format="csv", columns=("q", "eps_star", "alpha_star")),
    "metrics_{mode}_seed{seed}.jsonl": Metadata(
        format="jsonl",
        columns=("round", "selected_clients", "active_records", "client_accuracy", "mean_accuracy", "ledger_snapshot"),
    ),
    "ledger_{mode}_seed{seed}.csv": Metadata(format="csv", columns=LEDGER_COLUMNS),
    "ledger_{mode}_seed{seed}_round{round}.csv": Metadata(format="csv", columns=LEDGER_COLUMNS),
    "model_{mode}_seed{seed}.csv": Metadata(format="csv", columns=("index", "weight")),
    "per_class_{mode}_seed{seed}.csv": Metadata(format="csv", columns=("client_id", "label", "accuracy")),
    "summary.csv": Metadata(format="csv", columns=("mode", "seed", "final_mean_accuracy")),
    "timing.json": Metadata(format="json", payload=False),
}


def _pattern(template):
    return re.sub(r"\{[a-z_]+\}", "*", template)


def artifact_name(template, **fields):
    """The file name of a catalogue entry, with its placeholders filled in."""
    if template not in KNOWN_FILES:
        raise KeyError(f"{template!r} is not a known artifact")
    return template.format(**fields)


def lookup(filename):
    """The catalogue entry for a written file name, or None."""
    if filename in KNOWN_FILES:
        return KNOWN_FILES[filename]
    # The per-round ledger name also matches the final ledger's pattern, so longest first.
    for template in sorted(KNOWN_FILES, key=len, reverse=True):
        if fnmatch.fnmatchcase(filename, _pattern(template)):
            return KNOWN_FILES[template]
    return None
