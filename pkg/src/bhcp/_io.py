"""CSV/JSON helpers with reproducible byte-level formatting."""

import json

import numpy as np


def fmt(x):
    """Shortest round-trip decimal representation of a float.

    repr() of a Python float is deterministic for a given IEEE-754 value, so
    files written through this helper are bit-identical across reruns.
    """
    return repr(float(x))


def write_csv(path, header, columns):
    """Write columns (same length) under a comma-separated header line."""
    columns = [np.asarray(c) for c in columns]
    n = len(columns[0])
    if any(len(c) != n for c in columns):
        raise ValueError("CSV columns must have equal length")
    lines = [header]
    for i in range(n):
        lines.append(",".join(fmt(c[i]) for c in columns))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Read a CSV written by write_csv; returns (header fields, column arrays)."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    fields = lines[0].split(",")
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(fields))
    return fields, [data[:, j] for j in range(len(fields))]


def write_json(path, obj):
    """Deterministic JSON dump (sorted keys, fixed indentation)."""
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
