"""Social-outcome metrics and the per-seed metrics file."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def sustainability(collection_times, episode_length: int) -> tuple[float, bool]:
    """Mean fraction of the episode elapsed at each apple collection.

    Returns ``(value, empty)``; an episode with no collections scores 0 with
    ``empty`` set.
    """
    times = np.asarray(collection_times, dtype=np.float64)
    if times.size == 0:
        return 0.0, True
    return float(np.mean(times / episode_length)), False


def equality(returns) -> tuple[float, bool]:
    """``1 - Gini`` of per-agent returns, and whether the returns had to be adjusted.

    Negative returns are shifted so the minimum is zero; an all-zero vector is
    defined as perfectly equal.  The flag marks either case.
    """
    x = np.asarray(returns, dtype=np.float64)
    if x.size < 2:
        raise ValueError("equality needs at least two agents")
    flagged = False
    if x.min() < 0:
        x = x - x.min()
        flagged = True
    total = x.sum()
    if total == 0:
        return 1.0, True
    gini = np.abs(x[:, None] - x[None, :]).sum() / (2 * x.size * total)
    return float(1.0 - gini), flagged


def gini(returns) -> float:
    return 1.0 - equality(returns)[0]


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return repr(float(value))


class MetricsWriter:
    """Append-only CSV with a fixed header chosen by the first row."""

    def __init__(self, path):
        self.path = Path(path)
        self.columns: list[str] | None = None
        if self.path.exists():
            with open(self.path, newline="") as fh:
                header = next(csv.reader(fh), None)
            self.columns = header

    def append(self, row: dict) -> None:
        row = {"schema_version": SCHEMA_VERSION, **row}
        new_file = self.columns is None
        if new_file:
            self.columns = list(row)
            self.path.parent.mkdir(parents=True, exist_ok=True)
        elif list(row) != self.columns:
            raise ValueError(f"row columns {list(row)} do not match file header {self.columns}")
        with open(self.path, "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if new_file:
                writer.writerow(self.columns)
            writer.writerow([_fmt(row[c]) for c in self.columns])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {}
        for k, v in row.items():
            try:
                parsed[k] = float(v)
            except ValueError:
                parsed[k] = v
        out.append(parsed)
    return out


def mean_and_stderr(values) -> tuple[float, float]:
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))
