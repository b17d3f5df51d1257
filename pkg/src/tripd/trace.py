"""Column-oriented convergence traces with CSV export."""

from __future__ import annotations

import csv
import io
from typing import Iterable, Sequence

import numpy as np


def fmt_float(v) -> str:
    """17 significant digits, '.' decimal, no locale."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return "%.17g" % float(v)


class ConvergenceTrace:
    """Ordered per-iteration records with a fixed column set.

    The first column is the iteration (or round) counter and must be
    strictly increasing. Numeric columns may hold ``nan`` when a quantity
    was not measured (for instance the distance to a missing reference).
    """

    def __init__(self, columns: Sequence[str]):
        self.columns = tuple(columns)
        self.rows: list[tuple] = []

    def append(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        if self.rows and not values[0] > self.rows[-1][0]:
            raise ValueError("iteration counter must be strictly increasing")
        self.rows.append(tuple(values))

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        vals = [r[j] for r in self.rows]
        if vals and isinstance(vals[0], str):
            return np.array(vals, dtype=object)
        return np.array(vals, dtype=float)

    def last(self, name: str):
        return self.rows[-1][self.columns.index(name)] if self.rows else None

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([fmt_float(v) for v in r])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_rows(cls, columns: Sequence[str], rows: Iterable[Sequence]) -> "ConvergenceTrace":
        t = cls(columns)
        for r in rows:
            t.append(*r)
        return t
