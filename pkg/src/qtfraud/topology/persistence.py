"""Persistent homology over the two-element field.

Connected components (H_0) are tracked with a union-find over edges in
filtration order; higher homology comes from the standard boundary-matrix
column reduction with lowest-one pivoting. Features with equal birth and
death carry no information and are dropped; identical (dim, birth, death)
features aggregate into one entry with a multiplicity.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import IO, Iterable

from ..errors import ValidationError
from .rips import FilteredComplex

INF = math.inf

Feature = tuple[int, float, float, int]  # (dim, birth, death, multiplicity)


@dataclass(frozen=True)
class PersistenceDiagram:
    """Multiset of (dimension, birth, death, multiplicity) features."""

    features: tuple[Feature, ...]

    def __post_init__(self) -> None:
        for dim, birth, death, mult in self.features:
            if birth > death:
                raise ValidationError(f"feature ({dim},{birth},{death}) has birth > death")
            if mult < 1:
                raise ValidationError("multiplicities must be >= 1")

    def betti(self, k: int, eps: float) -> int:
        """Number of k-classes alive at eps: born at or before, dead after."""
        return sum(m for d, b, dth, m in self.features if d == k and b <= eps < dth)

    def by_dim(self, k: int) -> tuple[Feature, ...]:
        return tuple(f for f in self.features if f[0] == k)

    def dims(self) -> tuple[int, ...]:
        return tuple(sorted({f[0] for f in self.features}))

    def truncated(self, eps_max: float) -> "PersistenceDiagram":
        """Replace infinite deaths by eps_max and drop empty features."""
        feats = []
        for dim, birth, death, mult in self.features:
            death = min(death, eps_max)
            if birth < death:
                feats.append((dim, birth, death, mult))
        return PersistenceDiagram(tuple(sorted(feats)))

    def has_infinite(self) -> bool:
        return any(math.isinf(f[2]) for f in self.features)

    def total_multiplicity(self) -> int:
        return sum(f[3] for f in self.features)


def _aggregate(raw: Iterable[tuple[int, float, float]]) -> tuple[Feature, ...]:
    counts = Counter((dim, birth, death) for dim, birth, death in raw if birth < death)
    return tuple(sorted((d, b, dth, m) for (d, b, dth), m in counts.items()))


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def persistence(c: FilteredComplex) -> PersistenceDiagram:
    """Diagram for dimensions 0..max_dim of the filtered complex."""
    if c._diagram is not None:
        return c._diagram  # type: ignore[return-value]

    raw: list[tuple[int, float, float]] = []

    # H_0 via union-find; every vertex is born at filtration 0.
    uf = _UnionFind(c.n_vertices)
    positive_edges: set[tuple[int, ...]] = set()
    for filt, dim, verts in c.simplices:
        if dim != 1:
            continue
        if uf.union(verts[0], verts[1]):
            raw.append((0, 0.0, filt))
        else:
            positive_edges.add(verts)  # creates a 1-cycle
    components = {uf.find(v) for v in range(c.n_vertices)}
    raw.extend((0, 0.0, INF) for _ in components)

    # Higher dimensions: reduce boundary columns of (k+1)-simplices against
    # k-simplex rows, in filtration order.
    index: dict[tuple[int, ...], int] = {}
    info: list[tuple[float, int, tuple[int, ...]]] = []
    for pos, (filt, dim, verts) in enumerate(c.simplices):
        index[verts] = pos
        info.append((filt, dim, verts))

    # Track which k-simplices (k >= 1) are positive (create a class). Edges
    # come from the union-find; triangles and up from their own reduction.
    positive: set[int] = {index[e] for e in positive_edges}
    paired: set[int] = set()
    pivot_of: dict[int, frozenset[int]] = {}

    for pos, (filt, dim, verts) in enumerate(info):
        if dim < 2:
            continue
        col = set()
        for face in _faces(verts):
            col.symmetric_difference_update({index[face]})
        # Column reduction over GF(2).
        while col:
            piv = max(col)
            if piv not in pivot_of:
                break
            col ^= pivot_of[piv]
        if not col:
            if dim <= c.max_dim:
                positive.add(pos)
            continue
        piv = max(col)
        pivot_of[piv] = frozenset(col)
        paired.add(piv)
        birth_filt = info[piv][0]
        birth_dim = info[piv][1]
        if birth_dim >= 1:
            raw.append((birth_dim, birth_filt, filt))

    # Positive simplices never killed are essential classes.
    for pos in positive:
        if pos not in paired:
            filt, dim, _ = info[pos]
            raw.append((dim, filt, INF))

    diagram = PersistenceDiagram(_aggregate(raw))
    c._diagram = diagram
    return diagram


def _faces(verts: tuple[int, ...]) -> Iterable[tuple[int, ...]]:
    for i in range(len(verts)):
        yield verts[:i] + verts[i + 1:]


def betti_at(c: FilteredComplex, k: int, eps: float) -> int:
    """Betti number of dimension k at scale eps, read off the diagram."""
    if k > c.max_dim:
        raise ValidationError(f"k={k} exceeds the computed homology dimension {c.max_dim}")
    return persistence(c).betti(k, eps)


def euler_characteristic(c: FilteredComplex, eps: float) -> int:
    """Alternating sum of Betti numbers over the computed dimensions."""
    diag = persistence(c)
    return sum((-1) ** k * diag.betti(k, eps) for k in range(c.max_dim + 1))


# ---------------------------------------------------------------------------
# Serialization: one feature per JSON line {dim, birth, death, mult};
# infinite deaths are written as null.


def write_diagram(f: IO[str], diagram: PersistenceDiagram) -> None:
    for dim, birth, death, mult in diagram.features:
        rec = {
            "dim": dim,
            "birth": birth,
            "death": None if math.isinf(death) else death,
            "mult": mult,
        }
        f.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def read_diagram(f: IO[str]) -> PersistenceDiagram:
    feats = []
    for line in f:
        if not line.strip():
            continue
        rec = json.loads(line)
        death = INF if rec["death"] is None else float(rec["death"])
        feats.append((int(rec["dim"]), float(rec["birth"]), death, int(rec["mult"])))
    return PersistenceDiagram(tuple(sorted(feats)))


def diagram_to_lists(diagram: PersistenceDiagram) -> list[list]:
    return [
        [d, b, None if math.isinf(dth) else dth, m]
        for d, b, dth, m in diagram.features
    ]


def diagram_from_lists(rows: Iterable[Iterable]) -> PersistenceDiagram:
    feats = []
    for d, b, dth, m in rows:
        feats.append((int(d), float(b), INF if dth is None else float(dth), int(m)))
    return PersistenceDiagram(tuple(sorted(feats)))
