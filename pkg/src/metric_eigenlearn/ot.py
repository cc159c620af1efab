"""
Optimal-transport ground maps: exact OT, entropic OT with the regularizer
scaled by the cost's max-norm, the Sinkhorn divergence, and the maps that
turn a feature cost into a sample distance matrix (or vice versa).
"""

from __future__ import annotations

import math
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from ._transport import transport_simplex
from .core import (
    SAMPLES,
    CostMatrix,
    Dataset,
    GroundMetricMap,
    MatrixClass,
    ReferenceKind,
    as_reference,
    check_side,
    max_norm,
)
from .errors import (
    DimensionMismatch,
    NegativeDivergenceWarning,
    NonConvergence,
)

_PROB_TOL = 1e-10
_NEG_DIVERGENCE_TOL = 1e-9
# above this 1/epsilon the shared Gibbs kernel exp(-A/eta) may underflow
_KERNEL_EXPONENT_LIMIT = 600.0


def _check_prob(x, name, d):
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise DimensionMismatch(f"{name} has shape {x.shape}, expected ({d},)")
    if np.any(x < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(x.sum() - 1.0) > _PROB_TOL:
        raise ValueError(f"{name} sums to {x.sum()!r}, expected 1")
    return x


@dataclass(frozen=True)
class TransportProblem:
    cost: np.ndarray
    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.cost, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise DimensionMismatch(f"cost must be square, got {C.shape}")
        d = C.shape[0]
        object.__setattr__(self, "cost", C)
        object.__setattr__(self, "source", _check_prob(self.source, "source", d))
        object.__setattr__(self, "target", _check_prob(self.target, "target", d))


@dataclass(frozen=True)
class SinkhornParams:
    """Entropic-OT settings.

    The effective regularization is ``epsilon * max_norm(cost)``, recomputed
    for every cost matrix.
    """

    epsilon: float = 5e-2
    max_sweeps: int = 10_000
    marginal_tol: float = 1e-9
    log_domain: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.marginal_tol > 0:
            raise ValueError("marginal_tol must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")


def exact_ot(problem: TransportProblem, max_pivots: int = 10_000):
    """Exact optimal transport by the transportation simplex.

    Returns
    -------
    value : float
    plan : ndarray
        An optimal vertex of the transportation polytope.
    """
    return transport_simplex(problem.cost, problem.source, problem.target, max_pivots=max_pivots)


def kl_divergence(P, Q) -> float:
    """``sum P log(P / Q)`` with ``0 log 0 = 0`` and ``+inf`` when Q = 0 < P."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise DimensionMismatch(f"shapes differ: {P.shape} vs {Q.shape}")
    support = P > 0
    if np.any(support & (Q <= 0)):
        return math.inf
    p, q = P[support], Q[support]
    return float(max(np.sum(p * (np.log(p) - np.log(q))), 0.0))


# ---------------------------------------------------------------------------
# batched Sinkhorn


class PotentialCache:
    """Warm-start store for Sinkhorn column potentials, keyed by point pair.

    Only the starting point of the sweeps changes, so cached and uncached
    runs agree up to the marginal tolerance.
    """

    def __init__(self):
        self._store = {}
        self._lock = threading.Lock()

    def get(self, keys, eta, d):
        out = np.zeros((len(keys), d))
        with self._lock:
            for r, k in enumerate(keys):
                hit = self._store.get(k)
                if hit is not None:
                    out[r] = hit / eta
        return out

    def put(self, keys, g_scaled, eta):
        with self._lock:
            for r, k in enumerate(keys):
                self._store[k] = g_scaled[r] * eta

    def clear(self):
        with self._lock:
            self._store.clear()

    def __len__(self):
        return len(self._store)


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


class _LogKernel:
    """log-sum-exp products against ``-cost / eta`` for a batch of pairs."""

    def __init__(self, cost, eta):
        self.eta = eta
        self.neg = -cost / eta
        self.dense = max_norm(cost) / eta <= _KERNEL_EXPONENT_LIMIT
        if self.dense:
            self.K = np.exp(self.neg)

    def rows(self, h):
        # out[p, k] = log sum_l exp(h[p, l] - cost[k, l] / eta)
        return self._lse(h, self.neg, self.K if self.dense else None)

    def cols(self, h):
        # out[p, l] = log sum_k exp(h[p, k] - cost[k, l] / eta)
        return self._lse(h, self.neg.T, self.K.T if self.dense else None)

    @staticmethod
    def _lse(h, neg, K):
        if K is None:
            return logsumexp(h[:, None, :] + neg[None, :, :], axis=-1)
        s = np.max(h, axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            return s + np.log(np.exp(h - s) @ K.T)


def _no_convergence(params, violation):
    worst = float(np.max(violation))
    return NonConvergence(
        f"Sinkhorn reached {params.max_sweeps} sweeps with marginal violation {worst:.3e}",
        residual=worst,
    )


def _sinkhorn_self(kern, X, params: SinkhornParams):
    """Entropic self-transport ``W(x, x)`` for each row of ``X``.

    With a symmetric cost the optimal potentials coincide, so the averaged
    update ``f <- (f + T f) / 2`` is iterated; it converges far faster than
    alternating sweeps when epsilon is small.
    """
    P, d = X.shape
    logx = _log(X)
    f = np.zeros((P, d))
    active = np.arange(P)
    violation = np.full(P, np.inf)
    sweeps = 0
    while active.size:
        tf = -kern.rows(f[active] + logx[active])
        ratio = np.exp(np.where(X[active] > 0, f[active] - tf, 0.0))
        viol = np.sum(X[active] * np.abs(ratio - 1.0), axis=1)
        violation[active] = viol
        done = viol <= params.marginal_tol
        if done.all() or sweeps >= params.max_sweeps:
            break
        keep = active[~done]
        f[keep] = 0.5 * (f[keep] + tf[~done])
        active = keep
        sweeps += 1
    # plan x_k x_l exp(f_k + f_l - A_kl / eta) is symmetric; value = 2 eta <f, marginal>
    tf = -kern.rows(f + logx)
    rows = X * np.exp(np.where(X > 0, f - tf, 0.0))
    values = 2.0 * kern.eta * np.sum(np.where(X > 0, f, 0.0) * rows, axis=1)
    for p in np.flatnonzero(violation > params.marginal_tol):
        h, violation[p] = _newton_semidual(kern.neg, X[p], X[p], f[p], params.marginal_tol)
        values[p] = kern.eta * _pair_value(kern, X[p], X[p], h)
    if np.any(violation > params.marginal_tol):
        raise _no_convergence(params, violation)
    return values


def _damped_newton(M, xs, ys, h, tol, max_steps=100):
    """Levenberg-Marquardt safeguarded Newton ascent on the semi-dual.

    ``M[i, j] = log y_j - cost_ij / eta`` restricted to the supports.
    """

    def evaluate(h):
        Z = h[None, :] + M
        lse = logsumexp(Z, axis=1)
        return float(h @ ys - xs @ lse), np.exp(Z - lse[:, None])

    val, pi = evaluate(h)
    viol = math.inf
    mu = 0.0
    for _ in range(max_steps):
        col = xs @ pi
        grad = ys - col
        viol = float(np.sum(np.abs(grad)))
        if viol <= tol or ys.size == 1:
            break
        # the potential is defined up to a constant; pin the last coordinate
        Hm = (np.diag(col) - (pi.T * xs) @ pi)[:-1, :-1]
        scale = float(np.max(np.diag(Hm))) or 1.0
        accepted = False
        for _ in range(40):
            step = np.zeros_like(h)
            try:
                step[:-1] = np.linalg.solve(Hm + mu * scale * np.eye(len(Hm)), grad[:-1])
            except np.linalg.LinAlgError:
                step[:-1] = np.linalg.lstsq(Hm + mu * scale * np.eye(len(Hm)), grad[:-1], rcond=None)[0]
            slope = float(grad @ step)
            t = 1.0
            while slope > 0 and t >= 2.0**-10:
                new_val, new_pi = evaluate(h + t * step)
                if np.isfinite(new_val) and new_val >= val + 1e-4 * t * slope:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
            mu = max(100.0 * mu, 1e-12)
        if not accepted:
            break
        h, val, pi = h + t * step, new_val, new_pi
        mu = mu / 10.0 if mu > 1e-14 else 0.0
    return h, viol


def _newton_semidual(neg, x, y, h0, tol):
    """Entropic transport for one pair via Newton on the semi-dual.

    The semi-dual is ``<h, y> - sum_i x_i log sum_j y_j exp(h_j + neg_ij)`` in
    the scaled column potential ``h``; its gradient is ``y`` minus the column
    marginal of the induced plan, whose rows are exact. Used when the
    alternating sweeps stall on nearly deterministic plans. Newton is tried
    from ``h0`` first; if that fails the regularization is tightened from a
    well-conditioned level, doubling ``1 / eta`` per stage.

    Returns ``(h, l1 marginal violation)``; ``h`` is ``-inf`` off the support of ``y``.
    """
    I, J = x > 0, y > 0
    negIJ = neg[np.ix_(I, J)]
    logy = np.log(y[J])[None, :]
    xs, ys = x[I], y[J]
    h = np.where(np.isfinite(h0[J]), h0[J], 0.0)
    h, viol = _damped_newton(negIJ + logy, xs, ys, h, tol)
    if viol > tol:
        span = float(np.max(np.abs(negIJ))) if negIJ.size else 0.0
        scale = min(1.0, 1.0 / span) if span > 0 else 1.0
        h = np.zeros(ys.size)
        while True:
            h, viol = _damped_newton(scale * negIJ + logy, xs, ys, h, tol if scale == 1.0 else 1e-3)
            if scale == 1.0:
                break
            grow = min(2.0, 1.0 / scale)
            h, scale = h * grow, min(1.0, scale * grow)
    out = np.full(y.shape, -np.inf)
    out[J] = h
    return out, viol


def _pair_value(kern, x, y, h):
    """Scaled value ``<f, x> + <h, y>`` with ``f`` the exact row potential for ``h``."""
    J = y > 0
    f = -logsumexp(h[None, J] + np.log(y[J])[None, :] + kern.neg[:, J], axis=1)
    return float(np.sum(np.where(x > 0, f, 0.0) * x) + np.sum(h[J] * y[J]))


def _sinkhorn_batch(cost, X, Y, params: SinkhornParams, g0=None):
    """Entropic OT for each row pair ``(X[p], Y[p])`` under one cost.

    Returns scaled potentials ``f/eta, g/eta`` (finite on the supports),
    values and the regularization ``eta``. All pairs share the Gibbs kernel.
    With a symmetric cost, pairs with identical rows go through
    :func:`_sinkhorn_self`; their potentials are returned as ``f = g``.
    """
    P, d = X.shape
    eta = params.epsilon * max_norm(cost)
    kern = _LogKernel(cost, eta)
    same = np.all(X == Y, axis=1)
    if same.any() and np.array_equal(cost, cost.T):
        f = np.zeros((P, d))
        g = np.zeros((P, d))
        values = np.zeros(P)
        values[same] = _sinkhorn_self(kern, X[same], params)
        if (~same).any():
            gc = None if g0 is None else g0[~same]
            fc, gc, vc, _ = _sinkhorn_batch(cost, X[~same], Y[~same], params, g0=gc)
            f[~same], g[~same], values[~same] = fc, gc, vc
        return f, g, values, eta

    logx, logy = _log(X), _log(Y)
    f = np.zeros((P, d))
    g = np.zeros((P, d)) if g0 is None else g0.copy()

    def f_update(gs, idx):
        return -kern.rows(gs + logy[idx])

    def g_update(fs, idx):
        return -kern.cols(fs + logx[idx])

    active = np.arange(P)
    f = f_update(g, active)
    g = g_update(f, active)
    violation = np.full(P, np.inf)
    sweeps = 0
    while active.size:
        f_next = f_update(g[active], active)
        # row marginals of the current plan are x * exp(f - f_next)
        ratio = np.exp(np.where(X[active] > 0, f[active] - f_next, 0.0))
        viol = np.sum(X[active] * np.abs(ratio - 1.0), axis=1)
        violation[active] = viol
        done = viol <= params.marginal_tol
        keep = active[~done]
        if keep.size == 0 or sweeps >= params.max_sweeps:
            break
        f_keep = f_next[~done]
        f[keep] = f_keep
        g[keep] = g_update(f_keep, keep)
        active = keep
        sweeps += 1
    for p in np.flatnonzero(violation > params.marginal_tol):
        h, violation[p] = _newton_semidual(kern.neg, X[p], Y[p], g[p], params.marginal_tol)
        g[p] = np.where(Y[p] > 0, h, 0.0)
        f[p] = f_update(g[p:p + 1], np.array([p]))[0]
    if np.any(violation > params.marginal_tol):
        raise _no_convergence(params, violation)

    # primal value <A, P> + eta KL(P, x y^T) = <f, row marginal> + <g, y>
    f_next = f_update(g, np.arange(P))
    rows = X * np.exp(np.where(X > 0, f - f_next, 0.0))
    fs = np.where(X > 0, f, 0.0)
    gs = np.where(Y > 0, g, 0.0)
    values = eta * (np.sum(fs * rows, axis=1) + np.sum(gs * Y, axis=1))
    return f, g, values, eta


def _sinkhorn_scaling(cost, x, y, params: SinkhornParams):
    # plain (non-log) scaling iterations; may under/overflow for small epsilon
    eta = params.epsilon * max_norm(cost)
    K = np.exp(-cost / eta)
    a = np.ones_like(x)
    b = np.ones_like(y)
    for _ in range(params.max_sweeps):
        a = 1.0 / (K @ (b * y))
        b = 1.0 / (K.T @ (a * x))
        P = (a * x)[:, None] * K * (b * y)[None, :]
        viol = float(np.sum(np.abs(P.sum(axis=1) - x)))
        if viol <= params.marginal_tol:
            return P, eta
    raise NonConvergence(
        f"Sinkhorn reached {params.max_sweeps} sweeps with marginal violation {viol:.3e}",
        residual=viol,
    )


def entropic_ot(problem: TransportProblem, params: SinkhornParams = SinkhornParams()):
    """Entropically regularized OT with regularizer ``epsilon * max_norm(cost)``.

    Returns ``(value, plan)`` where
    ``value = <cost, plan> + epsilon * max_norm(cost) * KL(plan, source target^T)``.
    A zero cost gives value 0 and the product plan.
    """
    C, x, y = problem.cost, problem.source, problem.target
    prod = np.outer(x, y)
    if max_norm(C) == 0.0:
        return 0.0, prod
    if not params.log_domain:
        P, eta = _sinkhorn_scaling(C, x, y, params)
        P = np.where(prod > 0, P, 0.0)
        return float(np.sum(C * P) + eta * kl_divergence(P, prod)), P
    f, g, values, eta = _sinkhorn_batch(C, x[None, :], y[None, :], params)
    logP = f[0][:, None] + g[0][None, :] - C / eta
    P = np.where(prod > 0, prod * np.exp(np.where(prod > 0, logP, 0.0)), 0.0)
    return float(values[0]), P


def _finish_divergence(w_xy, w_xx, w_yy):
    s = w_xy - 0.5 * (w_xx + w_yy)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < -_NEG_DIVERGENCE_TOL):
        warnings.warn(
            f"Sinkhorn divergence {float(s.min()):.3e} is below -{_NEG_DIVERGENCE_TOL:g}; "
            "check marginal_tol and max_sweeps",
            NegativeDivergenceWarning,
            stacklevel=3,
        )
    else:
        s = np.where(s < 0, 0.0, s)
    return s


def sinkhorn_divergence(cost, x, y, params: SinkhornParams = SinkhornParams()) -> float:
    """``W(x, y) - (W(x, x) + W(y, y)) / 2`` with W the entropic OT value."""
    C = np.asarray(cost, dtype=float)
    d = C.shape[0]
    x = _check_prob(x, "x", d)
    y = _check_prob(y, "y", d)
    if max_norm(C) == 0.0:
        return 0.0
    if params.log_domain:
        X = np.stack([x, x, y])
        Y = np.stack([y, x, y])
        _, _, w, _ = _sinkhorn_batch(C, X, Y, params)
    else:
        w = [entropic_ot(TransportProblem(C, a, b), params)[0] for a, b in ((x, y), (x, x), (y, y))]
    return float(_finish_divergence(w[0], w[1], w[2])[0])


# ---------------------------------------------------------------------------
# maps


def sinkhorn_lipschitz_constant(data: Dataset, epsilon: float, side: str = SAMPLES) -> float:
    """``2 (1 + epsilon C)`` with ``C = 2 d max_i sum_{k: x_ik > 0} -log x_ik``.

    The points ``x_i`` are the probability vectors of ``side`` and ``d`` is
    their length.
    """
    V = data.vectors(check_side(side), normalized=True)
    with np.errstate(divide="ignore"):
        neglog = np.where(V > 0, -np.log(np.where(V > 0, V, 1.0)), 0.0)
    C = 2.0 * V.shape[1] * float(np.max(neglog.sum(axis=1)))
    return 2.0 * (1.0 + epsilon * C)


class OtGroundMap(GroundMetricMap):
    """``F(A)[i, j] = dist_A(x_i, x_j) + R[i, j]`` over the points of one side.

    Parameters
    ----------
    side : {'samples', 'features'}
        Side of the output. For ``'samples'`` the points are the columns of
        the column-normalized data and ``A`` is the ``m x m`` feature cost.
    variant : {'sinkhorn', 'exact'}
        Sinkhorn divergence or exact OT.
    params : SinkhornParams, optional
    reference : ReferenceMatrix or array, optional
        Added to the distances. ``None`` means no regularization.
    jobs : int
        Threads used for pairwise evaluation.
    warm_start : bool
        Reuse potentials between calls (Sinkhorn only).
    """

    input_class = MatrixClass.SEMI_METRIC

    def __init__(self, side=SAMPLES, variant="sinkhorn", params=None, reference=None,
                 jobs=1, warm_start=False):
        self.side = check_side(side)
        if variant not in ("sinkhorn", "exact"):
            raise ValueError(f"unknown OT variant {variant!r}")
        self.variant = variant
        self.params = params if params is not None else SinkhornParams()
        self.reference = as_reference(reference)
        self.jobs = max(1, int(jobs))
        self.cache = PotentialCache() if warm_start and variant == "sinkhorn" else None
        if variant == "exact" and self.reference is not None and self.reference.kind == ReferenceKind.SCALED_L1:
            self.output_class = MatrixClass.METRIC
        else:
            self.output_class = MatrixClass.SEMI_METRIC

    def __repr__(self):
        eps = f", epsilon={self.params.epsilon}" if self.variant == "sinkhorn" else ""
        return f"OtGroundMap(side={self.side!r}, variant={self.variant!r}{eps})"

    def points(self, data: Dataset) -> np.ndarray:
        return data.vectors(self.side, normalized=True)

    def distances(self, cost, data: Dataset) -> np.ndarray:
        """Pairwise OT distances between the points, without the reference."""
        C = self.check_input(cost, data)
        V = self.points(data)
        N = V.shape[0]
        iu, ju = np.triu_indices(N, 1)
        D = np.zeros((N, N))
        if max_norm(C) == 0.0:
            return D
        if self.variant == "exact":
            vals = self._parallel(lambda sl: [
                transport_simplex(C, V[i], V[j])[0] for i, j in zip(iu[sl], ju[sl])
            ], len(iu))
        else:
            vals = self._divergences(C, V, iu, ju)
        D[iu, ju] = vals
        D[ju, iu] = vals
        return D

    def _parallel(self, work, count):
        if self.jobs == 1 or count < 2 * self.jobs:
            return np.asarray(work(slice(0, count)), dtype=float)
        bounds = np.linspace(0, count, self.jobs + 1).astype(int)
        with ThreadPoolExecutor(self.jobs) as pool:
            parts = pool.map(work, [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])])
            return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def _entropic_values(self, C, X, Y, keys):
        g0 = None
        if self.cache is not None:
            eta = self.params.epsilon * max_norm(C)
            g0 = self.cache.get(keys, eta, X.shape[1])
        f, g, w, eta = _sinkhorn_batch(C, X, Y, self.params, g0=g0)
        if self.cache is not None:
            self.cache.put(keys, g, eta)
        return w

    def _divergences(self, C, V, iu, ju):
        N = V.shape[0]
        if not self.params.log_domain:
            w = {}
            for i, j in list(zip(iu, ju)) + [(k, k) for k in range(N)]:
                w[i, j] = entropic_ot(TransportProblem(C, V[i], V[j]), self.params)[0]
            wxy = np.array([w[i, j] for i, j in zip(iu, ju)])
            wself = np.array([w[k, k] for k in range(N)])
        else:
            pi = np.concatenate([iu, np.arange(N)])
            pj = np.concatenate([ju, np.arange(N)])

            def work(sl):
                return self._entropic_values(C, V[pi[sl]], V[pj[sl]], list(zip(pi[sl], pj[sl])))

            w = self._parallel(work, len(pi))
            wxy, wself = w[: len(iu)], w[len(iu):]
        return _finish_divergence(wxy, wself[iu], wself[ju])

    def apply(self, cost, data: Dataset) -> np.ndarray:
        return self.distances(cost, data) + self.reference_array(data)

    def apply_entries(self, cost, data, rows, cols):
        C = self.check_input(cost, data)
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        R = self.reference_array(data)
        V = self.points(data)
        out = np.zeros(len(rows))
        off = rows != cols
        if max_norm(C) > 0 and off.any():
            r, c = rows[off], cols[off]
            if self.variant == "exact":
                out[off] = [transport_simplex(C, V[i], V[j])[0] for i, j in zip(r, c)]
            else:
                selfs = np.unique(np.concatenate([r, c]))
                if self.params.log_domain:
                    w = self._entropic_values(
                        C, np.concatenate([V[r], V[selfs]]), np.concatenate([V[c], V[selfs]]),
                        list(zip(r, c)) + [(k, k) for k in selfs],
                    )
                else:
                    w = [entropic_ot(TransportProblem(C, V[i], V[j]), self.params)[0]
                         for i, j in list(zip(r, c)) + [(k, k) for k in selfs]]
                    w = np.asarray(w)
                pos = {k: t for t, k in enumerate(selfs)}
                wself = w[len(r):]
                out[off] = _finish_divergence(
                    w[: len(r)], wself[[pos[k] for k in r]], wself[[pos[k] for k in c]]
                )
        return out + R[rows, cols]

    def lipschitz_constant(self, data: Dataset) -> Optional[float]:
        if self.variant == "exact":
            return 1.0
        return sinkhorn_lipschitz_constant(data, self.params.epsilon, self.side)

    def norm_lower_bound(self, data: Dataset) -> float:
        return max_norm(self.reference_array(data))


def ot_map_apply(ot_map: OtGroundMap, cost, data: Dataset) -> CostMatrix:
    return CostMatrix(ot_map.apply(cost, data), ot_map.output_class)
