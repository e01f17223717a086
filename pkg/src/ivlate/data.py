"""Rectangular (X, Z, D, Y) datasets and their CSV round trip.

CSV dialect: comma separated, ``.`` decimal point, UTF-8, header row
mandatory.  Columns named ``z``, ``d``, ``y`` (case insensitive) hold the
binary instrument, treatment, and outcome; every other column is a
covariate, kept in file order.  An intercept column of ones is prepended
on load and stripped again on save.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .params import DomainError

__all__ = ["Dataset", "load_csv", "save_csv", "INTERCEPT"]

INTERCEPT = "intercept"
_RESERVED = ("z", "d", "y")


@dataclass(frozen=True)
class Dataset:
    """Design matrix (leading intercept column) plus binary z, d, y."""

    x: np.ndarray
    z: np.ndarray
    d: np.ndarray
    y: np.ndarray
    colnames: tuple

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        z = np.asarray(self.z)
        d = np.asarray(self.d)
        y = np.asarray(self.y)
        n = x.shape[0]
        if n < 1:
            raise DomainError("dataset is empty")
        for name, col in (("z", z), ("d", d), ("y", y)):
            if col.shape != (n,):
                raise DomainError(f"column {name} must have length {n}")
            values = np.asarray(col, dtype=float)
            if np.any(np.isnan(values)) or np.any((values != 0) & (values != 1)):
                raise DomainError(f"column {name} must be binary 0/1")
        if not np.all(np.isfinite(x)):
            raise DomainError("covariates must be finite (no missing values)")
        names = tuple(str(c) for c in self.colnames)
        if len(names) != x.shape[1]:
            raise DomainError("one name per design column required")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", np.asarray(z, dtype=float).astype(np.int64))
        object.__setattr__(self, "d", np.asarray(d, dtype=float).astype(np.int64))
        object.__setattr__(self, "y", np.asarray(y, dtype=float).astype(np.int64))
        object.__setattr__(self, "colnames", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def col(self, name: str) -> int:
        try:
            return self.colnames.index(name)
        except ValueError:
            raise DomainError(f"no column named {name!r}; have "
                              f"{list(self.colnames)}") from None

    def cols(self, names) -> tuple:
        return tuple(self.col(n) for n in names)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.x[rows], self.z[rows], self.d[rows],
                       self.y[rows], self.colnames)


def load_csv(path) -> Dataset:
    """Read a dataset; z/d/y required, all other columns are covariates."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DomainError(f"{path}: empty file (header row required)")
        rows = list(reader)

    names = [h.strip() for h in header]
    lowered = [h.lower() for h in names]
    for required in _RESERVED:
        if lowered.count(required) != 1:
            raise DomainError(
                f"{path}: exactly one column named {required!r} required")
    special = {required: lowered.index(required) for required in _RESERVED}
    covariate_idx = [i for i in range(len(names))
                     if i not in special.values()]

    if not rows:
        raise DomainError(f"{path}: no data rows")
    table = np.empty((len(rows), len(names)))
    for i, row in enumerate(rows):
        if len(row) != len(names):
            raise DomainError(f"{path}: row {i + 2} has {len(row)} fields, "
                              f"expected {len(names)}")
        for j, field in enumerate(row):
            text = field.strip()
            if not text:
                raise DomainError(f"{path}: empty value at row {i + 2}, "
                                  f"column {names[j]!r}")
            try:
                table[i, j] = float(text)
            except ValueError:
                raise DomainError(f"{path}: non-numeric value {text!r} at "
                                  f"row {i + 2}, column {names[j]!r}") from None

    x = np.column_stack([np.ones(len(rows))] + [table[:, j]
                                                for j in covariate_idx])
    colnames = (INTERCEPT,) + tuple(names[j] for j in covariate_idx)
    return Dataset(x=x, z=table[:, special["z"]], d=table[:, special["d"]],
                   y=table[:, special["y"]], colnames=colnames)


def save_csv(data: Dataset, path) -> None:
    """Write a dataset; drops the intercept column, keeps covariate order."""
    keep = [i for i, name in enumerate(data.colnames) if name != INTERCEPT]
    header = [data.colnames[i] for i in keep] + ["z", "d", "y"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(data.x[i, j])) for j in keep]
            row += [str(int(data.z[i])), str(int(data.d[i])),
                    str(int(data.y[i]))]
            writer.writerow(row)
