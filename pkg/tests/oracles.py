"""Independent reference computations used by the tests.

None of these call into the package; they recompute quantities from their
definitions by brute force.
"""

import itertools
import math

import numpy as np


def random_prob(rng, d, zeros=0):
    x = rng.random(d) + 1e-3
    if zeros:
        x[rng.choice(d, size=zeros, replace=False)] = 0.0
    return x / x.sum()


def random_semimetric(rng, d, scale=1.0):
    M = rng.random((d, d)) * scale
    M = 0.5 * (M + M.T)
    np.fill_diagonal(M, 0.0)
    return M


def random_psd(rng, d, rank=None):
    W = rng.standard_normal((d, rank or d))
    A = W @ W.T
    return 0.5 * (A + A.T)


def transport_vertices(cost, source, target):
    """Minimum of the transport LP by enumerating all basic feasible solutions.

    A basis of the d x d transportation polytope has ``2d - 1`` cells; each
    candidate cell set is solved as a square linear system after dropping
    one redundant marginal equation.
    """
    C = np.asarray(cost, dtype=float)
    d = C.shape[0]
    cells = [(i, j) for i in range(d) for j in range(d)]
    # marginal equations: row sums then column sums, last column equation dropped
    E = np.zeros((2 * d, d * d))
    for k, (i, j) in enumerate(cells):
        E[i, k] = 1.0
        E[d + j, k] = 1.0
    rhs = np.concatenate([source, target])
    E, rhs = E[:-1], rhs[:-1]
    best = math.inf
    for basis in itertools.combinations(range(d * d), 2 * d - 1):
        sub = E[:, basis]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        sol = np.linalg.solve(sub, rhs)
        if sol.min() < -1e-12:
            continue
        plan = np.zeros(d * d)
        plan[list(basis)] = np.clip(sol, 0.0, None)
        best = min(best, float(plan @ C.ravel()))
    return best


def entropic_objective_2x2(cost, source, target, t, eta):
    """``<C, P(t)> + eta KL(P(t), x y^T)`` along the one-parameter family of 2 x 2 plans."""
    x1, y1 = source[0], target[0]
    P = np.array([[t, x1 - t], [y1 - t, 1.0 - x1 - y1 + t]])
    Q = np.outer(source, target)
    kl = 0.0
    for p, q in zip(P.ravel(), Q.ravel()):
        if p > 0:
            kl += p * math.log(p / q)
    return float(np.sum(cost * P) + eta * kl)


def entropic_scan_2x2(cost, source, target, eps, grid=401, rounds=90):
    """Dense grid over the feasible interval, then golden-section refinement."""
    C = np.asarray(cost, dtype=float)
    eta = eps * float(np.max(np.abs(C)))
    lo = max(0.0, source[0] + target[0] - 1.0)
    hi = min(source[0], target[0])
    f = lambda t: entropic_objective_2x2(C, source, target, t, eta)
    ts = np.linspace(lo, hi, grid)
    vals = [f(t) for t in ts]
    k = int(np.argmin(vals))
    a, b = ts[max(k - 1, 0)], ts[min(k + 1, grid - 1)]
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(rounds):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return min(f(0.5 * (a + b)), vals[k])


def silhouette_loop(D, labels):
    D = np.asarray(D, dtype=float)
    labels = list(labels)
    n = len(labels)
    classes = sorted(set(labels))
    out = []
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            out.append(0.0)
            continue
        a = sum(D[i, j] for j in own) / len(own)
        b = math.inf
        for c in classes:
            if c == labels[i]:
                continue
            members = [j for j in range(n) if labels[j] == c]
            b = min(b, sum(D[i, j] for j in members) / len(members))
        m = max(a, b)
        out.append(0.0 if m == 0 else (b - a) / m)
    return out


def asw_loop(D, labels):
    s = silhouette_loop(D, labels)
    return sum(s) / len(s)


def dunn_loop(D, labels):
    n = len(labels)
    inter, intra = math.inf, 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if labels[i] == labels[j]:
                intra = max(intra, D[i, j])
            else:
                inter = min(inter, D[i, j])
    return inter / intra


def triangle_ok(D, tol=1e-10):
    n = D.shape[0]
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if D[i, k] > D[i, j] + D[j, k] + tol:
                    return False
    return True
