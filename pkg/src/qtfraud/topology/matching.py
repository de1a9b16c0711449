"""Bottleneck and 2-Wasserstein distances between persistence diagrams.

Features match only within the same homology dimension; unmatched points
project onto the diagonal. The bottleneck solver binary-searches the
candidate costs with a bipartite feasibility matching and is exact (the
optimum is always one of the candidates). The Wasserstein solver builds
the standard diagonal-augmented assignment problem and delegates the
minimum-cost perfect matching to the Hungarian method.

Totals across dimensions: max for bottleneck, root of summed squared
costs for Wasserstein.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..errors import ValidationError
from .persistence import PersistenceDiagram

Point = tuple[float, float]


def _expanded(diagram: PersistenceDiagram, k: int) -> list[Point]:
    pts: list[Point] = []
    for dim, b, d, m in diagram.features:
        if dim == k:
            if math.isinf(d):
                raise ValidationError("truncate essential classes before matching")
            pts.extend([(b, d)] * m)
    return pts


def bottleneck_distance(d1: PersistenceDiagram, d2: PersistenceDiagram) -> float:
    """Smallest c admitting a perfect matching that moves no point farther
    than c in the sup norm, diagonal projections allowed."""
    dims = sorted(set(d1.dims()) | set(d2.dims()))
    return max((_bottleneck_dim(_expanded(d1, k), _expanded(d2, k)) for k in dims),
               default=0.0)


def _bottleneck_dim(p: list[Point], q: list[Point]) -> float:
    if not p and not q:
        return 0.0
    cands = {0.0}
    cands.update(0.5 * (d - b) for b, d in p)
    cands.update(0.5 * (d - b) for b, d in q)
    for b1, d1 in p:
        for b2, d2 in q:
            cands.add(max(abs(b1 - b2), abs(d1 - d2)))
    ordered = sorted(cands)
    lo, hi = 0, len(ordered) - 1
    # The largest candidate (match everything to the diagonal or pairwise)
    # is always feasible.
    while lo < hi:
        mid = (lo + hi) // 2
        if _feasible(p, q, ordered[mid]):
            hi = mid
        else:
            lo = mid + 1
    return ordered[lo]


def _feasible(p: list[Point], q: list[Point], c: float) -> bool:
    """Perfect matching on (p + q-diagonal proxies) x (q + p-diagonal slots)."""
    eps = 1e-12
    np_, nq = len(p), len(q)
    size = np_ + nq
    adj: list[list[int]] = [[] for _ in range(size)]
    for i, (b1, d1) in enumerate(p):
        for j, (b2, d2) in enumerate(q):
            if max(abs(b1 - b2), abs(d1 - d2)) <= c + eps:
                adj[i].append(j)
        if 0.5 * (d1 - b1) <= c + eps:
            adj[i].append(nq + i)  # p_i may retire to its own diagonal slot
    for j, (b2, d2) in enumerate(q):
        if 0.5 * (d2 - b2) <= c + eps:
            adj[np_ + j].append(j)  # q_j may retire to its own proxy
        for i in range(np_):
            adj[np_ + j].append(nq + i)  # diagonal-to-diagonal is always free
    match_r = [-1] * size

    def augment(u: int, seen: list[bool]) -> bool:
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                if match_r[v] == -1 or augment(match_r[v], seen):
                    match_r[v] = u
                    return True
        return False

    matched = 0
    for u in range(size):
        if augment(u, [False] * size):
            matched += 1
    return matched == size


def wasserstein2(d1: PersistenceDiagram, d2: PersistenceDiagram) -> float:
    """W2: minimum-cost perfect matching with squared Euclidean costs,
    square-rooted total."""
    dims = sorted(set(d1.dims()) | set(d2.dims()))
    total_sq = 0.0
    for k in dims:
        total_sq += _wasserstein_sq_dim(_expanded(d1, k), _expanded(d2, k))
    return math.sqrt(total_sq)


def _wasserstein_sq_dim(p: list[Point], q: list[Point]) -> float:
    m, n = len(p), len(q)
    if m == 0 and n == 0:
        return 0.0
    if m == 0:
        return sum((d - b) ** 2 / 2.0 for b, d in q)
    if n == 0:
        return sum((d - b) ** 2 / 2.0 for b, d in p)
    pa = np.asarray(p)
    qa = np.asarray(q)
    cross = ((pa[:, None, :] - qa[None, :, :]) ** 2).sum(axis=2)
    diag_p = ((pa[:, 1] - pa[:, 0]) ** 2) / 2.0
    diag_q = ((qa[:, 1] - qa[:, 0]) ** 2) / 2.0
    big = 1.0 + 4.0 * (float(cross.max(initial=0.0)) + float(diag_p.sum()) + float(diag_q.sum())) * (m + n)
    cost = np.full((m + n, m + n), big)
    cost[:m, :n] = cross
    cost[:m, n:] = big
    cost[np.arange(m), n + np.arange(m)] = diag_p
    cost[m:, :n] = big
    cost[m + np.arange(n), np.arange(n)] = diag_q
    cost[m:, n:] = 0.0
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())
