"""Transportation simplex for small dense balanced transport problems."""

from collections import deque

import numpy as np

from .errors import Infeasible, NonConvergence

# consecutive degenerate pivots before switching from Dantzig to Bland's rule
_DEGENERATE_STREAK = 8


def _northwest_corner(source, target):
    n1, n2 = len(source), len(target)
    s, t = source.copy(), target.copy()
    flow = np.zeros((n1, n2))
    basis = []
    i = j = 0
    while True:
        x = min(max(s[i], 0.0), max(t[j], 0.0))
        flow[i, j] = x
        basis.append((i, j))
        s[i] -= x
        t[j] -= x
        if i == n1 - 1 and j == n2 - 1:
            break
        # staircase walk: exactly n1 + n2 - 1 cells, which form a spanning tree
        if j == n2 - 1:
            i += 1
        elif i == n1 - 1:
            j += 1
        elif s[i] <= t[j]:
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(cost, basis, n1, n2):
    # u_i + v_j = c_ij on every basic cell; the basis is a spanning tree
    adj = [[] for _ in range(n1 + n2)]
    for i, j in basis:
        adj[i].append(n1 + j)
        adj[n1 + j].append(i)
    pot = np.full(n1 + n2, np.nan)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        a = queue.popleft()
        for b in adj[a]:
            if np.isnan(pot[b]):
                i, j = (a, b - n1) if a < n1 else (b, a - n1)
                pot[b] = cost[i, j] - pot[a]
                queue.append(b)
    return pot[:n1], pot[n1:], adj


def _tree_path(adj, start, goal):
    """Node path from ``start`` to ``goal`` in the basis tree."""
    parent = {start: None}
    queue = deque([start])
    while queue:
        a = queue.popleft()
        if a == goal:
            break
        for b in adj[a]:
            if b not in parent:
                parent[b] = a
                queue.append(b)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def transport_simplex(cost, source, target, max_pivots=10_000, tol=1e-12):
    """Solve ``min <cost, P>`` over couplings of ``source`` and ``target``.

    Returns the optimal basic plan and its cost. The plan is a vertex of the
    transportation polytope.
    """
    cost = np.asarray(cost, dtype=float)
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    n1, n2 = cost.shape
    if abs(source.sum() - target.sum()) > 1e-9 * max(1.0, source.sum()):
        raise Infeasible(f"marginal masses differ: {source.sum()!r} vs {target.sum()!r}")
    if np.any(source < 0) or np.any(target < 0):
        raise Infeasible("marginals must be nonnegative")

    flow, basis = _northwest_corner(source, target)
    in_basis = np.zeros((n1, n2), dtype=bool)
    for cell in basis:
        in_basis[cell] = True
    scale = max(1.0, float(np.max(np.abs(cost))))
    streak = 0

    for _ in range(max_pivots):
        u, v, adj = _potentials(cost, basis, n1, n2)
        reduced = cost - u[:, None] - v[None, :]
        reduced[in_basis] = 0.0
        candidates = reduced < -tol * scale
        if not candidates.any():
            plan = np.clip(flow, 0.0, None)
            return float(np.sum(cost * plan)), plan
        if streak >= _DEGENERATE_STREAK:
            # Bland: lowest-index improving cell
            flat = int(np.flatnonzero(candidates)[0])
        else:
            flat = int(np.argmin(reduced))
        ei, ej = divmod(flat, n2)

        nodes = _tree_path(adj, n1 + ej, ei)
        cycle = []
        for a, b in zip(nodes[:-1], nodes[1:]):
            cycle.append((a, b - n1) if a < n1 else (b, a - n1))
        # cycle[0] touches column ej, so it loses flow; signs then alternate
        minus = cycle[0::2]
        plus = cycle[1::2]
        theta = min(flow[c] for c in minus)
        ties = [c for c in minus if flow[c] <= theta]
        leave = min(ties, key=lambda c: c[0] * n2 + c[1])

        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[ei, ej] = theta
        flow[leave] = 0.0
        basis.remove(leave)
        basis.append((ei, ej))
        in_basis[leave] = False
        in_basis[ei, ej] = True
        streak = streak + 1 if theta <= 0.0 else 0

    raise NonConvergence(f"transport simplex exceeded {max_pivots} pivots")
