"""Persistence landscapes as exact piecewise-linear functions.

The landscape of homology dimension k is the upper envelope of one tent
per diagram feature, scaled by its multiplicity:

    L_k(x) = sup over features of mult * max(0, min(x - birth, death - x))

Breakpoints are exact (tent corners plus pairwise tent intersections), so
L1 distances between landscapes integrate exactly on merged breakpoints.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from ..errors import ValidationError
from .persistence import PersistenceDiagram


@dataclass(frozen=True)
class LandscapeFunction:
    """Piecewise-linear function given by sorted breakpoints; zero outside."""

    xs: tuple[float, ...]
    ys: tuple[float, ...]
    dim: int

    def __post_init__(self) -> None:
        if len(self.xs) != len(self.ys):
            raise ValidationError("breakpoint arrays must have equal length")
        if any(self.xs[i] > self.xs[i + 1] for i in range(len(self.xs) - 1)):
            raise ValidationError("breakpoints must be sorted")
        if any(y < -1e-12 for y in self.ys):
            raise ValidationError("landscape values must be nonnegative")

    def __call__(self, x: float | np.ndarray) -> float | np.ndarray:
        if not self.xs:
            return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0
        return np.interp(x, self.xs, self.ys, left=0.0, right=0.0)

    def is_zero(self) -> bool:
        return not self.xs or all(y == 0.0 for y in self.ys)


def landscape(diagram: PersistenceDiagram, k: int) -> LandscapeFunction:
    """Exact envelope of the dimension-k tents of a finite diagram."""
    if diagram.has_infinite():
        raise ValidationError("truncate essential classes before building landscapes")
    feats = [(b, d, m) for dim, b, d, m in diagram.features if dim == k]
    if not feats:
        return LandscapeFunction(xs=(), ys=(), dim=k)

    candidates: set[float] = set()
    for b, d, m in feats:
        candidates.update((b, d, 0.5 * (b + d)))
    # Intersections of tent sides: side lines are y = m(x - b) (up) and
    # y = m(d - x) (down); intersect each pair within both supports.
    lines = []
    for b, d, m in feats:
        mid = 0.5 * (b + d)
        lines.append((m, -m * b, b, mid))    # up: y = m x - m b on [b, mid]
        lines.append((-m, m * d, mid, d))    # down: y = -m x + m d on [mid, d]
    for i in range(len(lines)):
        a1, c1, lo1, hi1 = lines[i]
        for j in range(i + 1, len(lines)):
            a2, c2, lo2, hi2 = lines[j]
            if a1 == a2:
                continue
            x = (c2 - c1) / (a1 - a2)
            if max(lo1, lo2) - 1e-15 <= x <= min(hi1, hi2) + 1e-15:
                candidates.add(x)

    xs = sorted(candidates)

    def envelope(x: float) -> float:
        best = 0.0
        for b, d, m in feats:
            v = m * min(x - b, d - x)
            if v > best:
                best = v
        return best

    pts = [(x, envelope(x)) for x in xs]
    # Collapse duplicates and collinear interior points.
    cleaned: list[tuple[float, float]] = []
    for x, y in pts:
        if cleaned and abs(x - cleaned[-1][0]) < 1e-15:
            cleaned[-1] = (x, max(y, cleaned[-1][1]))
        else:
            cleaned.append((x, y))
    final: list[tuple[float, float]] = []
    for pt in cleaned:
        while len(final) >= 2 and _collinear(final[-2], final[-1], pt):
            final.pop()
        final.append(pt)
    return LandscapeFunction(
        xs=tuple(p[0] for p in final), ys=tuple(p[1] for p in final), dim=k
    )


def _collinear(p: tuple[float, float], q: tuple[float, float], r: tuple[float, float]) -> bool:
    return abs((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1])) < 1e-12


def landscape_gradient(diagram: PersistenceDiagram, k: int, x: float) -> float:
    """Sum of mult * [birth <= x <= death] * sign(death - birth) over dim-k features."""
    if diagram.has_infinite():
        raise ValidationError("truncate essential classes before taking gradients")
    total = 0.0
    for dim, b, d, m in diagram.features:
        if dim == k and b <= x <= d:
            total += m * math.copysign(1.0, d - b) if d != b else 0.0
    return total


# ---------------------------------------------------------------------------
# Exact L1 distance between two landscapes


def landscape_l1(f: LandscapeFunction, g: LandscapeFunction) -> float:
    """Integral of |f - g|, exact on merged breakpoints with crossing splits."""
    xs = sorted(set(f.xs) | set(g.xs))
    if len(xs) < 2:
        return 0.0
    total = 0.0
    for x0, x1 in zip(xs, xs[1:]):
        if x1 <= x0:
            continue
        h0 = float(f(x0)) - float(g(x0))
        h1 = float(f(x1)) - float(g(x1))
        if h0 * h1 < 0.0:
            # Linear difference changes sign inside the interval.
            xc = x0 + (x1 - x0) * h0 / (h0 - h1)
            total += 0.5 * abs(h0) * (xc - x0) + 0.5 * abs(h1) * (x1 - xc)
        else:
            total += 0.5 * (abs(h0) + abs(h1)) * (x1 - x0)
    return total


def write_landscapes_csv(f: IO[str], landscapes: Sequence[LandscapeFunction]) -> None:
    """Breakpoint rows (dim, x, value) suitable for plotting."""
    writer = csv.writer(f)
    writer.writerow(["dim", "x", "value"])
    for land in landscapes:
        for x, y in zip(land.xs, land.ys):
            writer.writerow([land.dim, repr(x), repr(y)])
