"""Readers for the simulation output schemas.

Every reader validates the header/keys it relies on and raises SchemaError
naming the offending file, so the command line can exit with a clear
message instead of a traceback deep inside matplotlib.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


class SchemaError(ValueError):
    pass


def _float(text: str) -> float:
    if text == "inf":
        return math.inf
    if text == "-inf":
        return -math.inf
    return float(text)


def _read_csv(path: Path, required: list[str]) -> dict[str, np.ndarray]:
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    with path.open() as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        ix = {c: header.index(c) for c in required}
        cols = {c: [] for c in required}
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}: ragged row {row_num}")
            try:
                for c in required:
                    cols[c].append(_float(row[ix[c]]))
            except ValueError:
                raise SchemaError(f"{path}: non-numeric value in row {row_num}") from None
    return {c: np.array(v) for c, v in cols.items()}


def read_trajectories(path: Path):
    """Long-format (t, bank, X, K, alive) -> times plus per-bank K and X."""
    cols = _read_csv(path, ["t", "bank", "X", "K", "alive"])
    banks = np.unique(cols["bank"]).astype(int)
    times = np.unique(cols["t"])
    n, m = banks.size, times.size
    if n * m != cols["t"].size:
        raise SchemaError(f"{path}: incomplete (t, bank) grid")
    order = np.lexsort((cols["bank"], cols["t"]))
    K = cols["K"][order].reshape(m, n)
    X = cols["X"][order].reshape(m, n)
    return times, banks, X, K


def read_defaults(path: Path):
    cols = _read_csv(path, ["bank", "tau", "cascade_round"])
    return cols["bank"].astype(int), cols["tau"], cols["cascade_round"].astype(int)


def read_mf_density(path: Path):
    """(t, type, x, value) snapshots -> times, types, x grid, value cube."""
    cols = _read_csv(path, ["t", "type", "x", "value"])
    times = np.unique(cols["t"])
    types = np.unique(cols["type"]).astype(int)
    xs = np.unique(cols["x"])
    expected = times.size * types.size * xs.size
    if expected != cols["t"].size:
        raise SchemaError(f"{path}: incomplete (t, type, x) grid")
    order = np.lexsort((cols["x"], cols["type"], cols["t"]))
    cube = cols["value"][order].reshape(times.size, types.size, xs.size)
    return times, types, xs, cube


def read_mf_losses(path: Path):
    cols = _read_csv(path, ["t", "type", "loss"])
    times = np.unique(cols["t"])
    types = np.unique(cols["type"]).astype(int)
    if times.size * types.size != cols["t"].size:
        raise SchemaError(f"{path}: incomplete (t, type) grid")
    order = np.lexsort((cols["type"], cols["t"]))
    losses = cols["loss"][order].reshape(times.size, types.size)
    return times, types, losses


def read_jumps(path: Path):
    """mf_jumps.json -> list of (time, per-type delta)."""
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, list):
        raise SchemaError(f"{path}: expected a list of jump records")
    jumps = []
    for i, rec in enumerate(data):
        if "time" not in rec or "delta" not in rec:
            raise SchemaError(f"{path}: jump record {i} missing time/delta")
        jumps.append((float(rec["time"]), np.array(rec["delta"], dtype=float)))
    return jumps


def read_scaling_study(path: Path):
    """scaling_study.csv -> (m values, per-row m, per-row distances)."""
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["m", "seed"]:
            raise SchemaError(f"{path}: expected header starting with m,seed")
        dist_cols = [c for c in header if c.startswith("distance_type_")]
        if not dist_cols:
            raise SchemaError(f"{path}: no distance_type_* columns")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    m_vals = np.array([_float(r[0]) for r in rows])
    dists = np.array([[_float(r[header.index(c)]) for c in dist_cols] for r in rows])
    return m_vals, dists
