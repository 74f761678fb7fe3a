"""
Writing result files, and the tamper-evident manifest that covers them.

Payload files are written so that identical inputs give identical bytes:
floats as 17 significant digits, JSON with sorted keys, nothing time-dependent.
`MANIFEST.sha1` lists the SHA-1 of every payload file and ends with a line
holding the SHA-1 of the lines above it, so an edit to any listed file or to
the manifest itself is detected by `validate_manifest`.
"""

import csv
import hashlib
import io
import json
import logging
import math
import numbers
import os
import re

import numpy as np

from rpdp_fl.errors import DataError
from rpdp_fl.metadata import MANIFEST, lookup

LOG = logging.getLogger(__name__)


def format_value(value):
    """One CSV field."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, numbers.Integral):
        return str(int(value))
    if isinstance(value, numbers.Real):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    return str(value)


def _plain(value):
    """`value` with numpy scalars and arrays turned into JSON-ready Python objects."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def dumps(obj):
    return json.dumps(_plain(obj), sort_keys=True, allow_nan=False)


def sha1_file(path):
    digest = hashlib.sha1()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ArtifactWriter:
    """Writes the files of one output directory and remembers which ones are payload."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.written = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def _write(self, name, text):
        metadata = lookup(name)
        if metadata is None:
            raise DataError(f"{name} is not a known artifact")
        with open(self.path(name), "w", encoding="utf-8", newline="") as f:
            f.write(text)
        if metadata.payload and name not in self.written:
            self.written.append(name)
        LOG.debug("wrote %s", self.path(name))
        return self.path(name)

    def write_csv(self, name, rows):
        """Write rows under the catalogue's header for `name`."""
        columns = lookup(name).columns if lookup(name) else ()
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise DataError(f"{name}: row {row!r} does not match the columns {columns}")
            writer.writerow([format_value(v) for v in row])
        return self._write(name, buffer.getvalue())

    def write_jsonl(self, name, records):
        return self._write(name, "".join(dumps(record) + "\n" for record in records))

    def write_json(self, name, obj):
        return self._write(name, dumps(obj) + "\n")

    def write_manifest(self):
        """Write MANIFEST.sha1 over every payload file written so far."""
        lines = "".join(f"{sha1_file(self.path(name))}  {name}\n" for name in sorted(self.written))
        text = lines.encode("utf8")
        with open(self.path(MANIFEST), "wb") as f:
            f.write(text)
            f.write(f"# {hashlib.sha1(text).hexdigest()}\n".encode("utf8"))
        LOG.info("wrote %s covering %d files", self.path(MANIFEST), len(self.written))
        return self.path(MANIFEST)


MANIFEST_LINE = re.compile(r"^(?P<digest>[0-9a-f]{40})  (?P<name>[^/\\]+)$")


def validate_manifest(out_dir):
    """
    Check an output directory against its manifest.

    Returns a list of problems, empty if the manifest and every file it lists
    are unchanged.
    """
    path = os.path.join(out_dir, MANIFEST)
    if not os.path.exists(path):
        return [f"{path} doesn't exist"]
    with open(path, "rb") as f:
        text = f.read()

    start_last_line = text.rfind(b"\n", 0, -1)
    body = text[: start_last_line + 1]
    last_line = text[start_last_line + 1 :]
    match = re.search(b"[0-9a-f]{40}", last_line)
    if not match or match.group(0) != hashlib.sha1(body).hexdigest().encode("utf8"):
        return [f"{path} seems to have been edited"]

    problems = []
    for line in body.decode("utf8").splitlines():
        entry = MANIFEST_LINE.match(line)
        if not entry:
            problems.append(f"{path}: can't read {line!r}")
            continue
        listed = os.path.join(out_dir, entry.group("name"))
        if not os.path.exists(listed):
            problems.append(f"{listed} doesn't exist")
        elif sha1_file(listed) != entry.group("digest"):
            problems.append(f"{listed} has changed")
    return problems
