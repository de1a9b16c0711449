"""Vietoris-Rips filtration of a dissimilarity matrix.

A simplex enters the filtration at the largest pairwise distance among its
vertices. Simplices are built one dimension above the requested homology
dimension so that H_k is computable up to ``max_dim``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from ..errors import ValidationError
from .fidelity import DistanceMatrix

MAX_POINTS = 64

Simplex = tuple[float, int, tuple[int, ...]]  # (filtration, dim, vertices)


@dataclass
class FilteredComplex:
    """Simplices in (filtration, dimension, lexicographic) order."""

    simplices: tuple[Simplex, ...]
    n_vertices: int
    max_dim: int
    eps_max: float
    _diagram: object = field(default=None, repr=False, compare=False)

    def counts_at(self, eps: float) -> dict[int, int]:
        """Number of simplices of each dimension present at filtration eps."""
        out: dict[int, int] = {}
        for filt, dim, _ in self.simplices:
            if filt <= eps:
                out[dim] = out.get(dim, 0) + 1
        return out

    def filtration_values(self) -> list[float]:
        return sorted({filt for filt, _, _ in self.simplices})


def vietoris_rips(dm: DistanceMatrix, eps_max: float, max_dim: int) -> FilteredComplex:
    """Build the filtered complex up to simplices of dimension max_dim + 1."""
    if max_dim not in (1, 2):
        raise ValidationError(f"max_dim must be 1 or 2, got {max_dim}")
    n = dm.n
    if n > MAX_POINTS:
        raise ValidationError(f"{n} points exceed the Rips limit of {MAX_POINTS}")
    d = dm.d
    simplices: list[Simplex] = [(0.0, 0, (v,)) for v in range(n)]

    edges: dict[tuple[int, int], float] = {}
    for i, j in combinations(range(n), 2):
        if d[i, j] <= eps_max:
            edges[(i, j)] = float(d[i, j])
            simplices.append((float(d[i, j]), 1, (i, j)))

    # Higher simplices: filtration is the max over vertex pairs; only
    # candidates whose pairs are all present can qualify.
    for dim in range(2, max_dim + 2):
        added = 0
        for verts in combinations(range(n), dim + 1):
            pairs = list(combinations(verts, 2))
            if all(p in edges for p in pairs):
                filt = max(edges[p] for p in pairs)
                simplices.append((filt, dim, verts))
                added += 1
        if added == 0:
            break  # no (dim+1)-cliques means no larger ones either

    simplices.sort(key=lambda s: (s[0], s[1], s[2]))
    return FilteredComplex(
        simplices=tuple(simplices), n_vertices=n, max_dim=max_dim, eps_max=float(eps_max)
    )
