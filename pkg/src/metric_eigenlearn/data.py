"""Synthetic translated-histogram datasets and CSV ingestion."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Dataset, normalize_dataset
from .errors import NegativeEntries, ParseError

DEFAULT_PEAK_WIDTH = 1e4 / 25


class Shape(str, enum.Enum):
    H1 = "h1"
    H2 = "h2"
    H3 = "h3"


@dataclass(frozen=True)
class SyntheticSpec:
    """``X[i, j] = h(i/n - j/m)`` for i in 1..n, j in 1..m, read on the unit torus.

    ``peak_width`` is the factor in ``exp(-peak_width * x**2)``.
    """

    n: int
    m: int
    shape: Shape = Shape.H1
    peak_width: float = DEFAULT_PEAK_WIDTH

    def __post_init__(self):
        shape = self.shape if isinstance(self.shape, Shape) else Shape(str(self.shape).lower())
        object.__setattr__(self, "shape", shape)
        if self.n < 2 or self.m < 2:
            raise ValueError("n and m must both be at least 2")
        if not self.peak_width > 0:
            raise ValueError("peak_width must be positive")


def torus_reduce(x):
    """Nearest-image representative of ``x`` in [-1/2, 1/2] (ties to even)."""
    x = np.asarray(x, dtype=float)
    return x - np.round(x)


def _bump(x, width):
    return np.exp(-width * torus_reduce(x) ** 2)


def histogram_profile(x, shape=Shape.H1, peak_width=DEFAULT_PEAK_WIDTH):
    """The translated profile ``h`` evaluated on the torus, scaled to ``h(0) = 1``."""
    shape = Shape(shape)
    if shape is Shape.H1:
        h = lambda t: _bump(t, peak_width)
    elif shape is Shape.H2:
        h = lambda t: _bump(t, peak_width) + 0.5 * _bump(t + 0.5, peak_width)
    else:
        h = lambda t: _bump(t, peak_width) + 0.5 * _bump(t + 1.0 / 3.0, peak_width)
    return h(x) / h(0.0)


def synthetic_matrix(spec: SyntheticSpec) -> np.ndarray:
    """The raw ``n x m`` matrix with samples as rows (``i``) and features as columns (``j``)."""
    i = np.arange(1, spec.n + 1)[:, None] / spec.n
    j = np.arange(1, spec.m + 1)[None, :] / spec.m
    return histogram_profile(i - j, spec.shape, spec.peak_width)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Dataset of ``n`` translated histograms over ``m`` bins.

    The dataset stores features as rows, so its raw matrix is the transpose
    of :func:`synthetic_matrix`.
    """
    return normalize_dataset(synthetic_matrix(spec).T)


# ---------------------------------------------------------------------------
# CSV


def _parse_float(token, row, col):
    try:
        v = float(token)
    except ValueError:
        raise ParseError(f"row {row}, column {col}: cannot parse {token!r}", row, col, token) from None
    if not math.isfinite(v):
        raise ParseError(f"row {row}, column {col}: non-finite value {token!r}", row, col, token)
    return v


def read_matrix_csv(path) -> np.ndarray:
    """Read a rectangular numeric CSV; a single non-numeric first row is treated as a header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(tok.strip() for tok in r)]
    if not rows:
        raise ParseError(f"{path}: no data")
    start = 0
    try:
        [float(t) for t in rows[0]]
    except ValueError:
        start = 1
    width = len(rows[start]) if len(rows) > start else 0
    out = []
    for r, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise ParseError(f"row {r} has {len(row)} fields, expected {width}", r, None, None)
        out.append([_parse_float(tok.strip(), r, c + 1) for c, tok in enumerate(row)])
    if not out:
        raise ParseError(f"{path}: header only")
    return np.array(out, dtype=float)


def format_float(x) -> str:
    return f"{float(x):.17g}"


def write_matrix_csv(path, M, header=None) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in M:
            w.writerow([format_float(v) for v in row])


def load_csv(path, exp_transform: bool = False, transpose: bool = False) -> Dataset:
    """Load a data matrix from CSV.

    Parameters
    ----------
    exp_transform : bool
        Apply ``exp`` entrywise first (for inputs with negative entries,
        such as PCA scores).
    transpose : bool
        Transpose after reading; use it when the file stores samples as rows.
    """
    X = read_matrix_csv(Path(path))
    if exp_transform:
        X = np.exp(X)
    elif np.any(X < 0):
        r, c = np.argwhere(X < 0)[0]
        raise NegativeEntries(
            f"negative entry {X[r, c]!r} at row {r + 1}, column {c + 1}; enable exp_transform"
        )
    if transpose:
        X = X.T
    return normalize_dataset(X)
