"""Independent brute-force oracles for the test suite.

These deliberately share no code with the production modules beyond
primitive numpy arithmetic: homology by rank-nullity Gaussian elimination
over GF(2), diagram matching by exhaustive enumeration, gradients by
central finite differences, and closed-form single-qubit fidelity.
"""

from __future__ import annotations

import math
from itertools import combinations, permutations
from typing import Callable, Sequence

import numpy as np

INF = math.inf


# ---------------------------------------------------------------------------
# Homology by rank-nullity over GF(2)


def gf2_rank(rows: list[int]) -> int:
    """Rank of a GF(2) matrix whose rows are int bitmasks."""
    rank = 0
    pivots: list[int] = []
    for row in rows:
        for p in pivots:
            row = min(row, row ^ p)
        if row:
            pivots.append(row)
            rank += 1
    return rank


def homology_bruteforce(
    simplices: Sequence[tuple[float, int, tuple[int, ...]]],
    eps: float,
    max_dim: int,
) -> list[int]:
    """Betti numbers beta_0..beta_max_dim of the subcomplex at scale eps.

    beta_k = #k-simplices - rank(boundary_k) - rank(boundary_{k+1}),
    with boundaries taken over the two-element field.
    """
    present: dict[int, list[tuple[int, ...]]] = {}
    for filt, dim, verts in simplices:
        if filt <= eps:
            present.setdefault(dim, []).append(tuple(verts))
    for dim in present:
        present[dim] = sorted(present[dim])
    index = {
        dim: {v: i for i, v in enumerate(vs)} for dim, vs in present.items()
    }

    def boundary_rank(dim: int) -> int:
        # Columns are dim-simplices, rows are (dim-1)-simplices.
        if dim not in present or (dim - 1) not in present:
            return 0
        rows = []
        for verts in present[dim]:
            mask = 0
            for i in range(len(verts)):
                face = verts[:i] + verts[i + 1:]
                mask |= 1 << index[dim - 1][face]
            rows.append(mask)
        return gf2_rank(rows)

    betti = []
    for k in range(max_dim + 1):
        n_k = len(present.get(k, []))
        betti.append(n_k - boundary_rank(k) - boundary_rank(k + 1))
    return betti


def euler_from_simplices(
    simplices: Sequence[tuple[float, int, tuple[int, ...]]], eps: float
) -> int:
    """Alternating simplex count at scale eps (all dimensions present)."""
    total = 0
    for filt, dim, _ in simplices:
        if filt <= eps:
            total += (-1) ** dim
    return total


# ---------------------------------------------------------------------------
# Diagram matching by exhaustive enumeration

Point = tuple[float, float]


def _expand(features: Sequence[tuple[int, float, float, int]], k: int) -> list[Point]:
    pts: list[Point] = []
    for dim, b, d, m in features:
        if dim == k:
            pts.extend([(b, d)] * m)
    return pts


def _dims(*feature_sets) -> list[int]:
    out = set()
    for feats in feature_sets:
        out.update(f[0] for f in feats)
    return sorted(out)


def bottleneck_bruteforce(feats1, feats2) -> float:
    return max(
        (_bottleneck_dim_bf(_expand(feats1, k), _expand(feats2, k))
         for k in _dims(feats1, feats2)),
        default=0.0,
    )


def _bottleneck_dim_bf(p: list[Point], q: list[Point]) -> float:
    best = INF
    for cost in _matching_costs(p, q, _linf, _diag_linf):
        best = min(best, max(cost) if cost else 0.0)
    return best if best is not INF else 0.0


def wasserstein2_bruteforce(feats1, feats2) -> float:
    total = 0.0
    for k in _dims(feats1, feats2):
        p, q = _expand(feats1, k), _expand(feats2, k)
        best = INF
        for cost in _matching_costs(p, q, _sq_l2, _diag_sq_l2):
            best = min(best, sum(cost))
        total += best if best is not INF else 0.0
    return math.sqrt(total)


def _linf(a: Point, b: Point) -> float:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def _diag_linf(a: Point) -> float:
    return (a[1] - a[0]) / 2.0


def _sq_l2(a: Point, b: Point) -> float:
    return (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2


def _diag_sq_l2(a: Point) -> float:
    return (a[1] - a[0]) ** 2 / 2.0


def _matching_costs(
    p: list[Point],
    q: list[Point],
    pair_cost: Callable[[Point, Point], float],
    diag_cost: Callable[[Point], float],
):
    """Yield the cost multiset of every matching with diagonal projections."""
    m, n = len(p), len(q)
    for k in range(min(m, n) + 1):
        for sub_p in combinations(range(m), k):
            rest_p = [i for i in range(m) if i not in sub_p]
            for sub_q in combinations(range(n), k):
                rest_q = [j for j in range(n) if j not in sub_q]
                for perm in permutations(sub_q):
                    costs = [pair_cost(p[i], q[j]) for i, j in zip(sub_p, perm)]
                    costs += [diag_cost(p[i]) for i in rest_p]
                    costs += [diag_cost(q[j]) for j in rest_q]
                    yield costs


# ---------------------------------------------------------------------------
# Finite differences


def finite_difference_gradient(
    loss: Callable[[np.ndarray], float], theta: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    grad = np.zeros_like(theta, dtype=float)
    for i in range(theta.size):
        up = theta.copy()
        up[i] += step
        down = theta.copy()
        down[i] -= step
        grad[i] = (loss(up) - loss(down)) / (2.0 * step)
    return grad


# ---------------------------------------------------------------------------
# Closed-form single-qubit fidelity and random objects


def qubit_fidelity_closed_form(rho: np.ndarray, sigma: np.ndarray) -> float:
    """F = Tr(rho sigma) + 2 sqrt(det rho det sigma), valid for qubits.

    Determinants below the float-noise floor are exact zeros of
    rank-deficient states; keeping them would add O(sqrt(eps)) artifacts.
    """
    tr = np.real(np.trace(rho @ sigma))

    def _det(m: np.ndarray) -> float:
        d = float(np.real(np.linalg.det(m)))
        return d if d > 1e-14 else 0.0

    return float(tr + 2.0 * math.sqrt(_det(rho) * _det(sigma)))


def random_pure_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def random_mixed_state(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    r = rank or dim
    g = rng.normal(size=(dim, r)) + 1j * rng.normal(size=(dim, r))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def trace_norm(mat: np.ndarray) -> float:
    lam = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))
    return float(np.sum(np.abs(lam)))
