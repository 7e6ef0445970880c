"""Indexed numeric tables with CSV/JSON serialisation."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np


def format_number(x):
    """Shortest round-trip decimal for floats; plain digits for integers."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def _json_value(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.ndarray):
        return [_json_value(v) for v in x.tolist()]
    if isinstance(x, dict):
        return {str(k): _json_value(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_value(v) for v in x]
    return x


@dataclass
class CurveTable:
    """A numeric series: one index column and any number of named columns."""

    index_name: str
    index: np.ndarray
    columns: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.index = np.asarray(self.index)
        for name, col in list(self.columns.items()):
            col = np.asarray(col)
            if col.shape != self.index.shape:
                raise ValueError(f"column {name!r} has shape {col.shape}, index has {self.index.shape}")
            self.columns[name] = col

    def __len__(self):
        return len(self.index)

    def __getitem__(self, name):
        if name == self.index_name:
            return self.index
        return self.columns[name]

    def __contains__(self, name):
        return name == self.index_name or name in self.columns

    def add(self, name, values):
        values = np.asarray(values)
        if values.shape != self.index.shape:
            raise ValueError(f"column {name!r} has wrong length")
        self.columns[name] = values

    def at(self, x, name):
        """Value of column ``name`` at the row whose index equals ``x``."""
        hits = np.nonzero(np.isclose(self.index, x, rtol=0, atol=1e-12 * max(1.0, abs(x))))[0]
        if len(hits) == 0:
            raise KeyError(f"no row with {self.index_name}={x}")
        return self[name][hits[0]]

    def last(self, name):
        return self[name][-1]

    def to_csv(self, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        names = [self.index_name, *self.columns]
        buf.write(",".join(names) + "\n")
        cols = [self.index, *self.columns.values()]
        for i in range(len(self.index)):
            buf.write(",".join(format_number(c[i]) for c in cols) + "\n")
        return buf.getvalue()

    def to_dict(self):
        return {
            "index_name": self.index_name,
            "index": _json_value(self.index),
            "columns": {k: _json_value(v) for k, v in self.columns.items()},
            "meta": _json_value(self.meta),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        names = lines[0].split(",")
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
        rows = rows.reshape(-1, len(names))
        return cls(names[0], rows[:, 0], {n: rows[:, i + 1] for i, n in enumerate(names[1:])})

    def merge(self, other, prefix=""):
        """Columns of ``other`` (same index) appended in place."""
        if not np.array_equal(self.index, other.index):
            raise ValueError("index mismatch")
        for k, v in other.columns.items():
            self.columns[prefix + k] = v
        return self
