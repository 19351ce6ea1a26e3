"""Dataset containers, per-coordinate sort orders, and hinge design matrices.

A univariate convex fit is parameterized either by fitted values and slopes or
by slope increments.  The slope-increment parametrization needs the "hinge"
design matrix whose columns are the functions (x - x_j)_+ evaluated at every
sample, for x_j ranging over the first n-1 sorted sample values; its centered
variant has each column shifted to mean zero so that any linear combination is
automatically a centered fit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dataset",
    "Permutation",
    "HingeDesign",
    "load_csv",
    "sort_index",
    "hinge_design",
    "hinge_matrix_sorted",
]


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Covariate matrix, response vector, and column names.

    Parameters
    ----------
    X : ndarray of shape (n, p)
        Covariates, one row per sample.  Must be finite.
    y : ndarray of shape (n,)
        Response.  Must be finite.
    names : tuple of str, optional
        Distinct column labels, one per covariate.  Defaults to
        ``("x1", ..., "xp")``.

    Instances are immutable; the stored arrays are marked read-only.
    """

    X: np.ndarray
    y: np.ndarray
    names: tuple = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError("y must be 1-d with one entry per row of X")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite entries")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite entries")
        if self.names is None:
            names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
        else:
            names = tuple(str(c) for c in self.names)
        if len(names) != X.shape[1]:
            raise ValueError("need exactly one name per column")
        if len(set(names)) != len(names):
            raise ValueError("column names must be distinct")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "names", names)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def column_index(self, name):
        """Index of a named column; raises KeyError for unknown names."""
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no column named {name!r}") from None

    def subset(self, coords):
        """New Dataset keeping only the given coordinate indices (order preserved)."""
        coords = list(coords)
        return Dataset(self.X[:, coords], self.y, tuple(self.names[k] for k in coords))


@dataclass(frozen=True)
class Permutation:
    """Stable ascending sort order of one covariate column.

    ``order[i]`` is the sample index holding the i-th smallest value of the
    column; ties keep their original relative order.
    """

    order: np.ndarray
    coordinate: int

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.intp)
        if order.ndim != 1:
            raise ValueError("order must be 1-d")
        n = order.shape[0]
        if not np.array_equal(np.sort(order), np.arange(n)):
            raise ValueError("order is not a permutation of 0..n-1")
        object.__setattr__(self, "order", _frozen(order))

    @property
    def n(self):
        return self.order.shape[0]

    def inverse(self):
        """Positions of each sample in the sorted ordering."""
        inv = np.empty(self.n, dtype=np.intp)
        inv[self.order] = np.arange(self.n)
        return inv


@dataclass(frozen=True)
class HingeDesign:
    """Hinge design matrix of one coordinate, rows in original sample order.

    ``raw[i, j] = max(x_i - xs_j, 0)`` where ``xs`` holds the sorted column
    values and j runs over the first n-1 of them.  ``centered`` subtracts each
    column's mean, so ``centered @ d`` sums to zero for any weight vector d.
    Rows follow the original sample order so that fitted values line up with y
    without reshuffling.
    """

    raw: np.ndarray
    centered: np.ndarray
    perm: Permutation

    def __post_init__(self):
        object.__setattr__(self, "raw", _frozen(np.asarray(self.raw, dtype=float)))
        object.__setattr__(self, "centered", _frozen(np.asarray(self.centered, dtype=float)))


# ---- construction ----------------------------------------------------------


def load_csv(path, response_column):
    """Read a Dataset from a comma-separated file.

    The file must be UTF-8 with a header row; cells are plain unquoted
    numerics with '.' as the decimal mark.  The named response column becomes
    y and the remaining columns become X in header order.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise ValueError(f"no such file: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty file: no header row") from None
        header = [h.strip() for h in header]
        if header.count(response_column) == 0:
            raise ValueError(f"response column not found: {response_column!r}")
        if header.count(response_column) > 1:
            raise ValueError(f"duplicate response column: {response_column!r}")
        y_col = header.index(response_column)
        rows = []
        for i, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ValueError(
                    f"ragged row {i}: expected {len(header)} cells, got {len(row)}"
                )
            vals = []
            for j, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ValueError(
                        f"non-numeric cell at row {i}, column {header[j]!r}: {cell!r}"
                    ) from None
                if not np.isfinite(v):
                    raise ValueError(
                        f"non-finite cell at row {i}, column {header[j]!r}: {cell!r}"
                    )
                vals.append(v)
            rows.append(vals)
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    x_cols = [j for j in range(len(header)) if j != y_col]
    names = tuple(header[j] for j in x_cols)
    return Dataset(data[:, x_cols], data[:, y_col], names)


def sort_index(ds, k):
    """Stable ascending sort order of column k."""
    if not 0 <= k < ds.p:
        raise IndexError(f"coordinate {k} out of range for p={ds.p}")
    order = np.argsort(ds.X[:, k], kind="stable")
    return Permutation(order, k)


def hinge_matrix_sorted(xs):
    """Raw hinge matrix for an already-sorted value vector, rows in sorted order.

    Entry (i, j) is (xs[i] - xs[j])_+ with j < n-1, hence zero on and above
    the diagonal.
    """
    xs = np.asarray(xs, dtype=float)
    n = xs.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    return np.maximum(xs[:, None] - xs[None, : n - 1], 0.0)


def hinge_design(ds, k):
    """Build the HingeDesign of coordinate k, rows in original sample order."""
    if ds.n < 2:
        raise ValueError("need at least two samples to build a hinge design")
    perm = sort_index(ds, k)
    x = ds.X[:, k]
    xs = x[perm.order]
    # same formula as hinge_matrix_sorted but evaluated at unsorted rows
    raw = np.maximum(x[:, None] - xs[None, : ds.n - 1], 0.0)
    centered = raw - raw.mean(axis=0)
    return HingeDesign(raw, centered, perm)
