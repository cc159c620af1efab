"""
Shared numeric foundation: norms, matrix-class validation, the dataset
container with its two normalized copies, and reference matrices.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyAfterDedup,
    NegativeEntries,
    NotSymmetric,
    ZeroMarginal,
)

# Central tolerance table. Solver configs may override the class checks.
SYMMETRY_TOL = 1e-10
TRIANGLE_TOL = 1e-10
PSD_TOL = 1e-10
LAPLACIAN_TOL = 1e-10
DEDUP_TOL = 1e-12
QUADRATIC_FORM_TOL = 1e-10
PSD_SHIFT = 1e-12

SAMPLES = "samples"
FEATURES = "features"
SIDES = (SAMPLES, FEATURES)


class MatrixClass(str, enum.Enum):
    SEMI_METRIC = "semi-metric"
    METRIC = "metric"
    PSD = "psd"
    GRAPH_LAPLACIAN = "graph-laplacian"
    UNCHECKED = "unchecked"


def max_norm(M) -> float:
    """Entrywise maximum norm ``max |M[i, j]|``."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        raise ValueError("max_norm of an empty matrix")
    return float(np.max(np.abs(M)))


def check_side(side: str) -> str:
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")
    return side


def symmetrize(M, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Return ``(M + M.T) / 2``, rejecting matrices that are visibly asymmetric."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asym > tol:
        raise NotSymmetric(f"matrix asymmetry {asym:.3e} exceeds {tol:.1e}")
    return 0.5 * (M + M.T)


# ---------------------------------------------------------------------------
# class validation


@dataclass(frozen=True)
class Violation:
    kind: str
    index: tuple
    detail: str


@dataclass(frozen=True)
class ClassVerdict:
    tag: MatrixClass
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def _triangle_violations(M, tol, limit):
    # M[k, s] <= M[k, l] + M[l, s] for every l, scanned one middle index at a time
    found = []
    d = M.shape[0]
    for l in range(d):
        slack = M[:, l][:, None] + M[l, :][None, :] - M
        bad = np.argwhere(slack < -tol)
        for k, s in bad:
            found.append(
                Violation(
                    "triangle",
                    (int(k), l, int(s)),
                    f"M[{k},{s}]={M[k, s]:.6g} > M[{k},{l}]+M[{l},{s}]="
                    f"{M[k, l] + M[l, s]:.6g}",
                )
            )
            if len(found) >= limit:
                return found
    return found


def validate_class(M, tag, tol: Optional[float] = None, limit: int = 100) -> ClassVerdict:
    """Check ``M`` against the invariants of a matrix class.

    Never raises for invariant violations; every violation found (up to
    ``limit``) is returned with its witnessing index tuple.
    """
    tag = MatrixClass(tag)
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    violations = []
    if tag is MatrixClass.UNCHECKED:
        return ClassVerdict(tag)

    sym_tol = SYMMETRY_TOL if tol is None else tol
    asym = np.abs(M - M.T)
    for k, l in np.argwhere(np.triu(asym > sym_tol, 1))[:limit]:
        violations.append(
            Violation("symmetry", (int(k), int(l)), f"|M[{k},{l}] - M[{l},{k}]|={asym[k, l]:.3e}")
        )

    if tag in (MatrixClass.SEMI_METRIC, MatrixClass.METRIC):
        t = SYMMETRY_TOL if tol is None else tol
        for k in np.flatnonzero(np.abs(np.diag(M)) > t)[:limit]:
            violations.append(Violation("diagonal", (int(k), int(k)), f"M[{k},{k}]={M[k, k]:.6g}"))
        off = ~np.eye(M.shape[0], dtype=bool)
        for k, l in np.argwhere(off & (M < -t))[:limit]:
            violations.append(Violation("negative", (int(k), int(l)), f"M[{k},{l}]={M[k, l]:.6g}"))
        if tag is MatrixClass.METRIC:
            t = TRIANGLE_TOL if tol is None else tol
            violations.extend(_triangle_violations(M, t, limit))

    elif tag is MatrixClass.PSD:
        t = PSD_TOL if tol is None else tol
        lam = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0]) if M.size else 0.0
        if lam < -t:
            violations.append(Violation("eigenvalue", (), f"lambda_min={lam:.6g}"))

    elif tag is MatrixClass.GRAPH_LAPLACIAN:
        t = LAPLACIAN_TOL if tol is None else tol
        sums = M.sum(axis=1)
        for k in np.flatnonzero(np.abs(sums) > t)[:limit]:
            violations.append(Violation("row-sum", (int(k),), f"row {k} sums to {sums[k]:.6g}"))
        off = ~np.eye(M.shape[0], dtype=bool)
        for k, l in np.argwhere(off & (M > t))[:limit]:
            violations.append(Violation("positive-off-diagonal", (int(k), int(l)), f"M[{k},{l}]={M[k, l]:.6g}"))

    return ClassVerdict(tag, tuple(violations[:limit]))


def is_psd(M, shift: float = PSD_SHIFT) -> bool:
    """PSD test by attempted Cholesky of ``M + shift * I``."""
    M = np.asarray(M, dtype=float)
    scale = max(1.0, max_norm(M)) if M.size else 1.0
    try:
        np.linalg.cholesky(0.5 * (M + M.T) + shift * scale * np.eye(M.shape[0]))
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True)
class CostMatrix:
    """Square symmetric matrix with a declared class tag.

    Input is symmetrized when its asymmetry is within tolerance and rejected
    otherwise. The stored array is read-only.
    """

    entries: np.ndarray
    tag: MatrixClass = MatrixClass.UNCHECKED

    def __post_init__(self):
        M = symmetrize(self.entries)
        M.setflags(write=False)
        object.__setattr__(self, "entries", M)
        object.__setattr__(self, "tag", MatrixClass(self.tag))

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)

    @property
    def shape(self):
        return self.entries.shape

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def validate(self, tag=None, tol=None) -> ClassVerdict:
        return validate_class(self.entries, self.tag if tag is None else tag, tol=tol)


# ---------------------------------------------------------------------------
# datasets


def _dedup_indices(M, axis, tol):
    """Indices kept (first occurrence wins) and indices dropped along ``axis``."""
    vecs = M if axis == 0 else M.T
    keep, dropped = [], []
    for idx in range(vecs.shape[0]):
        v = vecs[idx]
        if any(np.max(np.abs(vecs[k] - v)) <= tol for k in keep):
            dropped.append(idx)
        else:
            keep.append(idx)
    return keep, dropped


@dataclass(frozen=True, eq=False)
class Dataset:
    """Nonnegative ``m x n`` data matrix (features as rows, samples as columns).

    ``row_normalized`` has unit row sums, ``col_normalized`` unit column sums.
    Samples are the columns; a sample's probability vector is therefore a
    column of ``col_normalized`` and a feature's is a row of
    ``row_normalized`` (see :meth:`vectors`).
    """

    raw: np.ndarray
    row_normalized: np.ndarray
    col_normalized: np.ndarray
    dropped_rows: tuple = ()
    dropped_cols: tuple = ()
    kept_rows: tuple = ()
    kept_cols: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def m(self) -> int:
        return self.raw.shape[0]

    @property
    def n(self) -> int:
        return self.raw.shape[1]

    def size(self, side: str) -> int:
        return self.n if check_side(side) == SAMPLES else self.m

    def vectors(self, side: str, normalized: bool = True) -> np.ndarray:
        """Points living on ``side``, one per row.

        ``samples`` gives an ``n x m`` array (the columns of X), ``features``
        an ``m x n`` array (the rows of X). With ``normalized`` each returned
        row is a probability vector.
        """
        key = (check_side(side), bool(normalized))
        if key not in self._cache:
            if side == SAMPLES:
                V = self.col_normalized.T if normalized else self.raw.T
            else:
                V = self.row_normalized if normalized else self.raw
            V = np.ascontiguousarray(V)
            V.setflags(write=False)
            self._cache[key] = V
        return self._cache[key]


def normalize_dataset(raw, dedup_tol: float = DEDUP_TOL, dedup: bool = True) -> Dataset:
    """Build a :class:`Dataset` from a nonnegative ``m x n`` matrix.

    Duplicate rows and columns (entrywise difference at most ``dedup_tol``)
    are removed, keeping the first occurrence. ``dedup=False`` keeps them,
    which is only useful for probing degenerate inputs.

    Raises
    ------
    ZeroMarginal
        If a row or column sums to zero.
    EmptyAfterDedup
        If fewer than two rows or two columns remain.
    """
    X = np.array(raw, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got {X.ndim}-D")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains NaN or infinite entries")
    if np.any(X < 0):
        raise NegativeEntries("data must be nonnegative")
    row_sums, col_sums = X.sum(axis=1), X.sum(axis=0)
    if np.any(row_sums <= 0):
        raise ZeroMarginal(f"rows {np.flatnonzero(row_sums <= 0).tolist()} sum to zero")
    if np.any(col_sums <= 0):
        raise ZeroMarginal(f"columns {np.flatnonzero(col_sums <= 0).tolist()} sum to zero")

    if dedup:
        kept_cols, dropped_cols = _dedup_indices(X, 1, dedup_tol)
        X = X[:, kept_cols]
        kept_rows, dropped_rows = _dedup_indices(X, 0, dedup_tol)
        X = X[kept_rows, :]
    else:
        kept_rows, dropped_rows = list(range(X.shape[0])), []
        kept_cols, dropped_cols = list(range(X.shape[1])), []
    if X.shape[0] < 2 or X.shape[1] < 2:
        raise EmptyAfterDedup(f"only a {X.shape[0]}x{X.shape[1]} matrix remains after deduplication")

    row = X / X.sum(axis=1, keepdims=True)
    col = X / X.sum(axis=0, keepdims=True)
    for arr in (X, row, col):
        arr.setflags(write=False)
    return Dataset(
        raw=X,
        row_normalized=row,
        col_normalized=col,
        dropped_rows=tuple(dropped_rows),
        dropped_cols=tuple(dropped_cols),
        kept_rows=tuple(kept_rows),
        kept_cols=tuple(kept_cols),
    )


# ---------------------------------------------------------------------------
# reference matrices


class ReferenceKind(str, enum.Enum):
    SCALED_L1 = "l1"
    SCALED_IDENTITY = "identity"
    USER = "user"


@dataclass(frozen=True, eq=False)
class ReferenceMatrix:
    entries: CostMatrix
    kind: ReferenceKind
    tau: Optional[float] = None

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    @property
    def dim(self) -> int:
        return self.entries.dim


def pairwise_l1(V) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    D = np.abs(V[:, None, :] - V[None, :, :]).sum(axis=-1)
    return 0.5 * (D + D.T)


def scaled_l1_reference(data: Dataset, side: str, tau: float) -> ReferenceMatrix:
    """``tau`` times the pairwise l1 distances of the normalized points on ``side``."""
    R = tau * pairwise_l1(data.vectors(side, normalized=True))
    return ReferenceMatrix(CostMatrix(R, MatrixClass.METRIC), ReferenceKind.SCALED_L1, tau)


def scaled_identity_reference(dim: int, tau: float) -> ReferenceMatrix:
    return ReferenceMatrix(
        CostMatrix(tau * np.eye(dim), MatrixClass.PSD), ReferenceKind.SCALED_IDENTITY, tau
    )


def user_reference(M, tag=MatrixClass.UNCHECKED) -> ReferenceMatrix:
    return ReferenceMatrix(CostMatrix(M, tag), ReferenceKind.USER)


def as_reference(ref) -> Optional[ReferenceMatrix]:
    if ref is None or isinstance(ref, ReferenceMatrix):
        return ref
    return user_reference(ref)


# ---------------------------------------------------------------------------
# ground metric maps


class GroundMetricMap:
    """A map from a cost matrix on one side to a matrix on ``self.side``.

    ``side='samples'`` maps an ``m x m`` feature cost to an ``n x n`` sample
    matrix; ``side='features'`` maps ``n x n`` to ``m x m``. Subclasses
    implement :meth:`apply`; :meth:`apply_entries` defaults to evaluating the
    whole matrix.
    """

    side: str = SAMPLES
    reference: Optional[ReferenceMatrix] = None
    input_class: MatrixClass = MatrixClass.UNCHECKED
    output_class: MatrixClass = MatrixClass.UNCHECKED

    def input_dim(self, data: Dataset) -> int:
        return data.m if self.side == SAMPLES else data.n

    def output_dim(self, data: Dataset) -> int:
        return data.size(self.side)

    def check_input(self, cost, data: Dataset) -> np.ndarray:
        C = np.asarray(cost, dtype=float)
        d = self.input_dim(data)
        if C.shape != (d, d):
            raise DimensionMismatch(
                f"{type(self).__name__} on side {self.side!r} expects a {d}x{d} cost, got {C.shape}"
            )
        return C

    def reference_array(self, data: Dataset) -> np.ndarray:
        d = self.output_dim(data)
        if self.reference is None:
            return np.zeros((d, d))
        R = np.asarray(self.reference, dtype=float)
        if R.shape != (d, d):
            raise DimensionMismatch(f"reference is {R.shape}, output side needs {d}x{d}")
        return R

    def apply(self, cost, data: Dataset) -> np.ndarray:
        raise NotImplementedError

    def apply_entries(self, cost, data: Dataset, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        full = self.apply(cost, data)
        return full[np.asarray(rows, dtype=int), np.asarray(cols, dtype=int)]

    def lipschitz_constant(self, data: Dataset) -> Optional[float]:
        return None

    def norm_lower_bound(self, data: Dataset) -> float:
        """A constant ``C`` with ``max_norm(self.apply(A)) >= C`` for all admissible A."""
        return 0.0

    def __call__(self, cost, data: Dataset) -> np.ndarray:
        return self.apply(cost, data)
