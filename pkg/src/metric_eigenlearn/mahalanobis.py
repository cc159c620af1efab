"""
Kernel-Mahalanobis ground maps.

``F(A)[i, j] = f(M_A(x_i, x_j)) + R[i, j]`` where ``M_A`` is the Mahalanobis
distance under a PSD matrix ``A`` and ``f`` a radially positive definite
kernel with ``f(0) = 1``. Kernels are evaluated on squared distances.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    QUADRATIC_FORM_TOL,
    SAMPLES,
    CostMatrix,
    Dataset,
    GroundMetricMap,
    MatrixClass,
    as_reference,
    check_side,
    max_norm,
)
from .errors import (
    DimensionMismatch,
    LaplacianNeedsPositiveReference,
    NegativeQuadraticForm,
)


class KernelKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    INVERSE_MULTIQUADRIC = "imq"
    LAPLACIAN = "laplacian"


@dataclass(frozen=True)
class RadialKernel:
    """Radial kernel ``f`` with ``f(0) = 1``.

    ``param`` is the bandwidth sigma for the Gaussian and Laplacian kinds and
    the shape parameter epsilon for the inverse multiquadric.
    """

    kind: KernelKind
    param: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if not self.param > 0:
            raise ValueError("kernel parameter must be positive")

    @classmethod
    def gaussian(cls, sigma=1.0):
        return cls(KernelKind.GAUSSIAN, sigma)

    @classmethod
    def inverse_multiquadric(cls, eps=1.0):
        return cls(KernelKind.INVERSE_MULTIQUADRIC, eps)

    @classmethod
    def laplacian(cls, sigma=1.0):
        return cls(KernelKind.LAPLACIAN, sigma)

    def of_squared(self, t):
        """``f(sqrt(t))`` for squared distances ``t >= 0``."""
        t = np.asarray(t, dtype=float)
        p = self.param
        if self.kind is KernelKind.GAUSSIAN:
            return np.exp(-t / (2.0 * p * p))
        if self.kind is KernelKind.INVERSE_MULTIQUADRIC:
            return 1.0 / np.sqrt(1.0 + p * p * t)
        return np.exp(-np.sqrt(t) / p)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.of_squared(r * r)

    def scalar_lipschitz(self, q: float = 0.0) -> float:
        """Lipschitz constant of ``t -> f(sqrt(t))`` on ``[q, inf)``."""
        p = self.param
        if self.kind is KernelKind.GAUSSIAN:
            return 1.0 / (2.0 * p * p)
        if self.kind is KernelKind.INVERSE_MULTIQUADRIC:
            return p * p / 2.0
        if q <= 0:
            raise LaplacianNeedsPositiveReference(
                "the Laplacian kernel is only Lipschitz in squared distance on [q, inf) with q > 0"
            )
        return 1.0 / (2.0 * p * math.sqrt(q))


def _clamp_forms(q, tol=QUADRATIC_FORM_TOL, error=NegativeQuadraticForm):
    if q.size and q.min() < -tol:
        raise error(f"quadratic form {q.min():.3e} is negative; the matrix is not PSD")
    return np.where(q < 0, 0.0, q)


def mahalanobis_distance(A, x, y) -> float:
    """``sqrt((x - y)^T A (x - y))`` for PSD ``A``."""
    A = np.asarray(A, dtype=float)
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if A.shape != (d.size, d.size):
        raise DimensionMismatch(f"A is {A.shape} but vectors have length {d.size}")
    q = _clamp_forms(np.atleast_1d(d @ A @ d))
    return float(np.sqrt(q[0]))


def quadratic_forms(A, diffs) -> np.ndarray:
    """``diffs[p] @ A @ diffs[p]`` for each row, without clamping."""
    return np.einsum("pd,pd->p", diffs @ A, diffs)


def pairwise_squared_mahalanobis(A, V, error=NegativeQuadraticForm) -> np.ndarray:
    """Squared Mahalanobis distances between the rows of ``V``.

    Each unordered pair is evaluated once from its difference vector and
    mirrored, so the result is exactly symmetric with a zero diagonal.
    """
    A = np.asarray(A, dtype=float)
    V = np.asarray(V, dtype=float)
    if A.shape != (V.shape[1], V.shape[1]):
        raise DimensionMismatch(f"A is {A.shape} but points have length {V.shape[1]}")
    N = V.shape[0]
    iu, ju = np.triu_indices(N, 1)
    q = _clamp_forms(quadratic_forms(A, V[iu] - V[ju]), error=error)
    Q = np.zeros((N, N))
    Q[iu, ju] = q
    Q[ju, iu] = q
    return Q


def project_psd(A, tol=QUADRATIC_FORM_TOL) -> np.ndarray:
    """Clip slightly negative eigenvalues of ``A`` to zero.

    Eigenvalues below ``-tol`` mean the input is genuinely indefinite and
    raise :class:`NegativeQuadraticForm`.
    """
    A = 0.5 * (np.asarray(A, dtype=float) + np.asarray(A, dtype=float).T)
    w, U = np.linalg.eigh(A)
    if w[0] >= 0:
        return A
    if w[0] < -tol:
        raise NegativeQuadraticForm(f"smallest eigenvalue {w[0]:.3e} is below -{tol:g}")
    B = (U * np.clip(w, 0.0, None)) @ U.T
    return 0.5 * (B + B.T)


@dataclass(frozen=True)
class LipschitzBudget:
    r: float
    q: float
    L_scalar: float
    L_map: float
    interval: tuple = (0.0, math.inf)


class KernelGroundMap(GroundMetricMap):
    """``F(A) = f(M_A(x_i, x_j)) + R`` over the points of one side.

    Parameters
    ----------
    kernel : RadialKernel
    side : {'samples', 'features'}
        Output side; ``'samples'`` maps the ``m x m`` matrix ``A`` to ``n x n``.
    reference : ReferenceMatrix or array, optional
        PSD matrix added to the kernel matrix.
    normalized : bool
        Use the normalized probability vectors instead of the raw columns or
        rows of the data.
    clamp_negative : bool
        Replace negative quadratic forms by 0 instead of raising. This
        extends the map to non-PSD inputs (as produced by entrywise
        stochastic updates) without changing its Lipschitz constant, since
        ``t -> max(t, 0)`` is 1-Lipschitz.
    """

    input_class = MatrixClass.PSD
    output_class = MatrixClass.PSD

    def __init__(self, kernel: RadialKernel, side=SAMPLES, reference=None, normalized=False,
                 clamp_negative=False):
        self.kernel = kernel
        self.side = check_side(side)
        self.reference = as_reference(reference)
        self.normalized = bool(normalized)
        self.clamp_negative = bool(clamp_negative)

    def __repr__(self):
        return (f"KernelGroundMap({self.kernel.kind.value}, param={self.kernel.param}, "
                f"side={self.side!r})")

    def points(self, data: Dataset) -> np.ndarray:
        return data.vectors(self.side, normalized=self.normalized)

    def _prepare(self, cost, data):
        A = self.check_input(cost, data)
        if self.kernel.kind is KernelKind.LAPLACIAN and not self.clamp_negative:
            A = project_psd(A)
        return A

    def _forms(self, q):
        if self.clamp_negative:
            return np.where(q < 0, 0.0, q)
        return _clamp_forms(q)

    def apply(self, cost, data: Dataset) -> np.ndarray:
        A = self._prepare(cost, data)
        V = self.points(data)
        if A.shape != (V.shape[1], V.shape[1]):
            raise DimensionMismatch(f"A is {A.shape} but points have length {V.shape[1]}")
        N = V.shape[0]
        iu, ju = np.triu_indices(N, 1)
        Q = np.zeros((N, N))
        q = self._forms(quadratic_forms(A, V[iu] - V[ju]))
        Q[iu, ju] = q
        Q[ju, iu] = q
        K = self.kernel.of_squared(Q)
        np.fill_diagonal(K, 1.0)
        return K + self.reference_array(data)

    def apply_entries(self, cost, data, rows, cols):
        A = self._prepare(cost, data)
        V = self.points(data)
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        # evaluate each pair in a fixed orientation so (i, j) and (j, i) agree bitwise
        lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
        q = self._forms(quadratic_forms(A, V[lo] - V[hi]))
        vals = np.where(lo == hi, 1.0, self.kernel.of_squared(q))
        return vals + self.reference_array(data)[rows, cols]

    def lipschitz_budget(self, data: Dataset, input_floor: Optional[float] = None) -> LipschitzBudget:
        """Lipschitz constant of the map in the max-norm.

        ``input_floor`` is a lower bound on the smallest eigenvalue of the
        input matrices; it is only needed by the Laplacian kernel, which is
        Lipschitz on squared distances at least ``q = input_floor * min
        ||x_i - x_j||_2^2``.
        """
        V = self.points(data)
        iu, ju = np.triu_indices(V.shape[0], 1)
        D = V[iu] - V[ju]
        r = float(np.max(np.abs(D).sum(axis=1)) ** 2)
        lam = 0.0 if input_floor is None else max(float(input_floor), 0.0)
        q = lam * float(np.min(np.einsum("pd,pd->p", D, D)))
        Ls = self.kernel.scalar_lipschitz(q)
        interval = (q, math.inf) if self.kernel.kind is KernelKind.LAPLACIAN else (0.0, math.inf)
        return LipschitzBudget(r=r, q=q, L_scalar=Ls, L_map=r * Ls, interval=interval)

    def lipschitz_constant(self, data: Dataset, input_floor: Optional[float] = None) -> Optional[float]:
        try:
            return self.lipschitz_budget(data, input_floor).L_map
        except LaplacianNeedsPositiveReference:
            return None

    def norm_lower_bound(self, data: Dataset) -> float:
        R = self.reference_array(data)
        return 1.0 + float(np.max(np.diag(R)))


def kernel_map_apply(kernel_map: KernelGroundMap, A, data: Dataset) -> CostMatrix:
    return CostMatrix(kernel_map.apply(A, data), MatrixClass.PSD)


def lipschitz_budget(kernel_map: KernelGroundMap, data: Dataset, input_floor=None) -> LipschitzBudget:
    return kernel_map.lipschitz_budget(data, input_floor)


def reference_min_eigenvalue(ref) -> float:
    if ref is None:
        return 0.0
    return float(np.linalg.eigvalsh(np.asarray(ref, dtype=float))[0])
