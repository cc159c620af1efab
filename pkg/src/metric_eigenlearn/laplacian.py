"""
Graph-Laplacian ground maps and their eigen-pipeline.

``F(A) = diag(W 1) - W`` with ``W[i, j] = M_A(x_i, x_j)**2``. Both maps are
linear, so a fixed point of the coupled problem is an eigenvector of
``G o F``. Restricted to the strictly lower triangle of ``A`` the composed
map is an entrywise positive matrix ``H`` (for generic data); its Perron
vector gives the off-diagonal of ``A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    FEATURES,
    SAMPLES,
    ClassVerdict,
    CostMatrix,
    Dataset,
    GroundMetricMap,
    MatrixClass,
    check_side,
    validate_class,
)
from .errors import DimensionMismatch, NegativeWeight, NonConvergence, NotGeneric
from .mahalanobis import pairwise_squared_mahalanobis

GENERICITY_TOL = 1e-20
CROSS_CHECK_MAX = 50
CROSS_CHECK_TOL = 1e-9


# ---------------------------------------------------------------------------
# lower-triangle indexing


def lowertri_size(m: int) -> int:
    return m * (m - 1) // 2


def lowertri_index(p: int, q: int) -> int:
    """Linear index of the pair ``p > q`` (0-based), row-major in p then q."""
    if not p > q >= 0:
        raise ValueError(f"need p > q >= 0, got ({p}, {q})")
    return p * (p - 1) // 2 + q


def lowertri_pairs(m: int):
    """Arrays ``(p, q)`` listing the strictly lower triangle in linear-index order."""
    p, q = np.tril_indices(m, -1)
    return p, q


def lowertri_vector(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    p, q = lowertri_pairs(A.shape[0])
    return A[p, q]


# ---------------------------------------------------------------------------
# the map


def laplacian_of_weights(W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    L = -W.copy()
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(L, -L.sum(axis=1))
    return L


class LaplacianGroundMap(GroundMetricMap):
    """``F(A) = diag(W 1) - W`` with squared Mahalanobis weights between points.

    The reference matrix is not used: the map is linear and its fixed
    points are found by :func:`solve_laplacian`.
    """

    input_class = MatrixClass.PSD
    output_class = MatrixClass.GRAPH_LAPLACIAN

    def __init__(self, side=SAMPLES, normalized=False):
        self.side = check_side(side)
        self.normalized = bool(normalized)
        self.reference = None

    def __repr__(self):
        return f"LaplacianGroundMap(side={self.side!r})"

    def points(self, data: Dataset) -> np.ndarray:
        return data.vectors(self.side, normalized=self.normalized)

    def weights(self, cost, data: Dataset) -> np.ndarray:
        A = self.check_input(cost, data)
        return pairwise_squared_mahalanobis(A, self.points(data), error=NegativeWeight)

    def apply(self, cost, data: Dataset) -> np.ndarray:
        return laplacian_of_weights(self.weights(cost, data))

    def lipschitz_constant(self, data: Dataset) -> Optional[float]:
        # |F(A)_ii| = sum_s d_is^T A d_is <= ||A||_max sum_s ||d_is||_1^2
        V = self.points(data)
        l1 = np.abs(V[:, None, :] - V[None, :, :]).sum(axis=-1) ** 2
        return float(np.max(l1.sum(axis=1)))


def laplacian_map_apply(A, data: Dataset, side=SAMPLES, normalized=False) -> CostMatrix:
    return CostMatrix(LaplacianGroundMap(side, normalized).apply(A, data), MatrixClass.GRAPH_LAPLACIAN)


def basis_laplacian(m: int, p: int, q: int) -> np.ndarray:
    """Laplacian with -1 at (p, q), (q, p) and +1 at (p, p), (q, q)."""
    E = np.zeros((m, m))
    E[p, q] = E[q, p] = -1.0
    E[p, p] = E[q, q] = 1.0
    return E


# ---------------------------------------------------------------------------
# genericity


def _double_differences(V):
    """``D[(k, l), (i, j)] = V[k, i] - V[l, i] - V[k, j] + V[l, j]`` over k > l, i > j."""
    m, n = V.shape
    kp, kq = lowertri_pairs(m)
    ip, iq = lowertri_pairs(n)
    R = V[kp] - V[kq]  # (pairs of rows) x n
    return R[:, ip] - R[:, iq]


@dataclass(frozen=True)
class GenericityVerdict:
    generic: bool
    kind: Optional[str] = None
    witness: Optional[tuple] = None
    log_p1: float = -math.inf
    log_p2: float = -math.inf

    def __bool__(self):
        return self.generic


def _pair_points(data: Dataset, normalized: bool):
    # Y: feature points (rows of X, length n); Z: sample points (columns, length m)
    return data.vectors(FEATURES, normalized), data.vectors(SAMPLES, normalized)


def genericity_check(data: Dataset, normalized: bool = False, tol: float = GENERICITY_TOL,
                     H=None) -> GenericityVerdict:
    """Check the two nondegeneracy conditions behind the eigen-pipeline.

    The first asks, for every feature pair (k, l) and every feature pair
    (p, q), for samples i, j with both double differences nonzero; its sum
    of squares is twice the matching entry of the Perron matrix. The second
    asks that no two samples differ by a multiple of the ones vector. A
    factor counts as zero when it falls below ``tol`` times the data scale
    raised to the factor's polynomial degree. A precomputed Perron matrix
    ``H`` may be passed to skip its assembly.
    """
    Y, Z = _pair_points(data, normalized)
    scale = max(float(np.max(np.abs(Y))), float(np.max(np.abs(Z))))
    m = Y.shape[0]

    # second condition: sum_{k,l} (d_k - d_l)^2 = 2 (m |d|^2 - (sum d)^2) for d = z_i - z_j,
    # evaluated on the centred vector to avoid cancellation
    ip, iq = lowertri_pairs(Z.shape[0])
    d = Z[ip] - Z[iq]
    dc = d - d.mean(axis=1, keepdims=True)
    p2 = 2.0 * m * np.einsum("pd,pd->p", dc, dc)
    bad2 = np.flatnonzero(p2 <= tol * scale**2)
    log_p2 = float(np.sum(np.log(p2))) if bad2.size == 0 else -math.inf

    if H is None:
        H = perron_matrix(data, normalized)
    inner = 2.0 * np.asarray(H)  # sums over ordered (i, j): the P1 factors
    bad1 = np.argwhere(inner <= tol * scale**4)
    log_p1 = float(np.sum(np.log(inner))) if bad1.size == 0 else -math.inf

    if bad1.size:
        kp, kq = lowertri_pairs(m)
        a, b = bad1[0]
        return GenericityVerdict(False, "P1", (int(kp[a]), int(kq[a]), int(kp[b]), int(kq[b])), log_p1, log_p2)
    if bad2.size:
        return GenericityVerdict(False, "P2", (int(ip[bad2[0]]), int(iq[bad2[0]])), log_p1, log_p2)
    return GenericityVerdict(True, None, None, log_p1, log_p2)


# ---------------------------------------------------------------------------
# Perron system


@dataclass
class PerronSystem:
    H: np.ndarray
    m: int
    strict_positivity: bool
    leading_eigenvalue: Optional[float] = None
    leading_eigenvector: Optional[np.ndarray] = None
    cross_check_error: Optional[float] = None
    residual_history: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.H.shape[0]


def perron_matrix(data: Dataset, normalized: bool = False) -> np.ndarray:
    """``H[(k,l),(p,q)] = 1/2 sum_{i,j} (dY_kl(i) - dY_kl(j))^2 (dZ_ij(p) - dZ_ij(q))^2``."""
    Y, Z = _pair_points(data, normalized)
    U = _double_differences(Y) ** 2
    V = _double_differences(Z) ** 2
    # the closed form runs over ordered (i, j); unordered pairs count twice
    return U @ V


def composed_map_matrix(data: Dataset, normalized: bool = False) -> np.ndarray:
    """``H`` read off by pushing each basis Laplacian through ``G o F``."""
    F = LaplacianGroundMap(SAMPLES, normalized)
    G = LaplacianGroundMap(FEATURES, normalized)
    m = data.m
    p, q = lowertri_pairs(m)
    H = np.empty((len(p), len(p)))
    for c in range(len(p)):
        out = G.apply(F.apply(basis_laplacian(m, p[c], q[c]), data), data)
        H[:, c] = -out[p, q]
    return H


def assemble_perron_matrix(data: Dataset, normalized: bool = False, cross_check: Optional[bool] = None,
                           check_generic: bool = True) -> PerronSystem:
    """Build the Perron matrix of the composed Laplacian maps.

    For at most ``CROSS_CHECK_MAX`` unknowns the closed form is compared
    against :func:`composed_map_matrix`; a relative mismatch above 1e-9
    raises ``AssertionError``.

    Raises
    ------
    NotGeneric
        If the data fail :func:`genericity_check`.
    """
    H = perron_matrix(data, normalized)
    if check_generic:
        _require_generic(genericity_check(data, normalized, H=H))
    err = None
    if cross_check is None:
        cross_check = H.shape[0] <= CROSS_CHECK_MAX
    if cross_check:
        H2 = composed_map_matrix(data, normalized)
        err = float(np.max(np.abs(H - H2)) / max(np.max(np.abs(H)), 1e-300))
        if err > CROSS_CHECK_TOL:
            raise AssertionError(f"closed-form Perron matrix disagrees with G o F by {err:.3e}")
    return PerronSystem(H=H, m=data.m, strict_positivity=bool(np.min(H) > 0), cross_check_error=err)


def _require_generic(verdict):
    if not verdict:
        raise NotGeneric(f"data are not generic: {verdict.kind} factor vanishes at {verdict.witness}",
                         witness=verdict.witness)


@dataclass(frozen=True)
class PowerIterationResult:
    eigenvalue: float
    eigenvector: np.ndarray
    iterations: int
    residual: float
    history: tuple = ()


def power_iteration(H, tol: float = 1e-12, max_iters: int = 100_000, seed: Optional[int] = None,
                    v0=None) -> PowerIterationResult:
    """Leading eigenpair of an entrywise positive matrix.

    Starts from the all-ones vector and keeps ``max|v| = 1``. Stops when
    ``max|H v - lambda v| / lambda <= tol``. If that fails and ``seed`` is
    given, one restart from a random positive vector is attempted.

    Raises
    ------
    NonConvergence
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionMismatch(f"H must be square, got {H.shape}")
    symmetric = np.array_equal(H, H.T)
    v = np.ones(H.shape[0]) if v0 is None else np.asarray(v0, dtype=float).copy()
    v /= np.max(np.abs(v))
    history = []
    res = math.inf
    for it in range(1, max_iters + 1):
        w = H @ v
        lam = float(v @ w / (v @ v)) if symmetric else float(np.max(w))
        res = float(np.max(np.abs(w - lam * v)) / lam)
        history.append(res)
        if res <= tol:
            return PowerIterationResult(lam, v, it, res, tuple(history))
        v = w / np.max(np.abs(w))
    if seed is not None and v0 is None:
        start = np.random.default_rng(seed).uniform(0.5, 1.5, H.shape[0])
        return power_iteration(H, tol, max_iters, None, start)
    raise NonConvergence(f"power iteration did not reach {tol:g} in {max_iters} steps", residual=res)


def reconstruct_ground_matrix(v, m: int) -> np.ndarray:
    """Graph Laplacian with off-diagonal ``-v`` (lower-triangle order) and zero row sums."""
    v = np.asarray(v, dtype=float)
    if v.shape != (lowertri_size(m),):
        raise DimensionMismatch(f"expected {lowertri_size(m)} entries for m={m}, got {v.shape}")
    A = np.zeros((m, m))
    p, q = lowertri_pairs(m)
    A[p, q] = -v
    A[q, p] = -v
    np.fill_diagonal(A, -A.sum(axis=1))
    return A


@dataclass(frozen=True)
class MetricCheck:
    ok: bool
    hypothesis_ok: bool
    witness: Optional[tuple]
    verdict: Optional[ClassVerdict]
    distances: np.ndarray

    def __bool__(self):
        return self.ok


def metric_matrix_check(A, data: Dataset, normalized: bool = False, tol: float = GENERICITY_TOL) -> MetricCheck:
    """Check that ``M_A`` over the samples is a metric matrix.

    The hypothesis that no two samples differ by a multiple of the ones
    vector is verified first and reported with a witnessing pair.
    """
    Z = data.vectors(SAMPLES, normalized)
    ip, iq = lowertri_pairs(Z.shape[0])
    d = Z[ip] - Z[iq]
    dc = d - d.mean(axis=1, keepdims=True)
    spread = np.einsum("pd,pd->p", dc, dc)
    scale = max(float(np.max(np.abs(Z))), 1e-300)
    bad = np.flatnonzero(spread <= tol * scale**2)
    D = np.sqrt(pairwise_squared_mahalanobis(np.asarray(A, dtype=float), Z, error=NegativeWeight))
    if bad.size:
        w = (int(ip[bad[0]]), int(iq[bad[0]]))
        return MetricCheck(False, False, w, None, D)
    verdict = validate_class(D, MatrixClass.METRIC)
    off = ~np.eye(D.shape[0], dtype=bool)
    ok = verdict.ok and bool(np.all(D[off] > 0))
    return MetricCheck(ok, True, None, verdict, D)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class LaplacianResult:
    A: np.ndarray
    B: np.ndarray
    eigenvalue: float
    lambda_f: float
    lambda_g: float
    eigen_residual: float
    system: PerronSystem
    power: PowerIterationResult
    metric: MetricCheck
    genericity: GenericityVerdict

    @property
    def gamma_f(self):
        return 1.0 / self.lambda_f

    @property
    def gamma_g(self):
        return 1.0 / self.lambda_g


def solve_laplacian(data: Dataset, normalized: bool = False, split: float = 0.5, tol: float = 1e-12,
                    max_iters: int = 100_000, seed: Optional[int] = None,
                    cross_check: Optional[bool] = None) -> LaplacianResult:
    """Fixed point of the coupled Laplacian maps via the Perron vector.

    ``split`` sets ``lambda_F = lambda**split`` and ``lambda_G =
    lambda**(1 - split)``; the pair solves ``B = F(A) / lambda_F``,
    ``A = G(B) / lambda_G``.
    """
    if not 0.0 < split < 1.0:
        raise ValueError("split must lie in (0, 1)")
    system = assemble_perron_matrix(data, normalized, cross_check=cross_check, check_generic=False)
    gen = genericity_check(data, normalized, H=system.H)
    _require_generic(gen)
    pw = power_iteration(system.H, tol=tol, max_iters=max_iters, seed=seed)
    system.leading_eigenvalue = pw.eigenvalue
    system.leading_eigenvector = pw.eigenvector
    system.residual_history = list(pw.history)
    A = reconstruct_ground_matrix(pw.eigenvector, data.m)
    F = LaplacianGroundMap(SAMPLES, normalized)
    G = LaplacianGroundMap(FEATURES, normalized)
    FA = F.apply(A, data)
    lam = pw.eigenvalue
    eig_res = float(np.max(np.abs(G.apply(FA, data) - lam * A)) / lam)
    lam_f = lam**split
    lam_g = lam / lam_f
    return LaplacianResult(
        A=A,
        B=FA / lam_f,
        eigenvalue=lam,
        lambda_f=lam_f,
        lambda_g=lam_g,
        eigen_residual=eig_res,
        system=system,
        power=pw,
        metric=metric_matrix_check(A, data, normalized),
        genericity=gen,
    )
