import math

import numpy as np
import pytest

from qtfraud.errors import ValidationError
from qtfraud.topology.landscapes import (
    landscape,
    landscape_gradient,
    landscape_l1,
)
from qtfraud.topology.matching import bottleneck_distance, wasserstein2
from qtfraud.topology.persistence import PersistenceDiagram
from oracles import bottleneck_bruteforce, wasserstein2_bruteforce

INF = math.inf


def diagram(*feats):
    return PersistenceDiagram(tuple(sorted(feats)))


def direct_envelope(feats, x):
    best = 0.0
    for _, b, d, m in feats:
        best = max(best, m * max(0.0, min(x - b, d - x)))
    return best


def random_diagram(rng, max_pts=6, dims=(0, 1)):
    feats = []
    n = int(rng.integers(0, max_pts + 1))
    for _ in range(n):
        b = float(np.round(rng.uniform(0, 1), 3))
        d = b + float(np.round(rng.uniform(0.01, 1), 3))
        k = int(rng.choice(dims))
        feats.append((k, b, d, 1))
    merged = {}
    for f in feats:
        merged[f[:3]] = merged.get(f[:3], 0) + 1
    return PersistenceDiagram(tuple(sorted((k, b, d, m) for (k, b, d), m in merged.items())))


class TestLandscape:
    def test_single_feature_triangle(self):
        land = landscape(diagram((1, 0.0, 2.0, 1)), 1)
        assert land(1.0) == pytest.approx(1.0)
        assert land(0.0) == 0.0
        assert land(2.0) == 0.0
        assert land(0.5) == pytest.approx(0.5)
        assert (1.0, 1.0) in zip(land.xs, land.ys)

    def test_empty_diagram_zero_function(self):
        land = landscape(diagram(), 1)
        assert land.is_zero()
        assert land(0.37) == 0.0

    def test_envelope_matches_pointwise_oracle(self, rng):
        for _ in range(20):
            diag = random_diagram(rng, dims=(1,))
            land = landscape(diag, 1)
            xs = rng.uniform(-0.5, 2.5, size=200)
            feats = diag.by_dim(1)
            for x in xs:
                assert float(land(float(x))) == pytest.approx(
                    direct_envelope(feats, float(x)), abs=1e-12
                )

    def test_multiplicity_scales_tent(self):
        land = landscape(diagram((0, 0.0, 2.0, 3)), 0)
        assert land(1.0) == pytest.approx(3.0)

    def test_lipschitz_bound(self, rng):
        for _ in range(10):
            diag = random_diagram(rng, dims=(0,))
            land = landscape(diag, 0)
            max_mult = max((f[3] for f in diag.by_dim(0)), default=1)
            xs, ys = land.xs, land.ys
            for i in range(len(xs) - 1):
                if xs[i + 1] > xs[i]:
                    slope = abs(ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
                    assert slope <= max_mult + 1e-9

    def test_value_nonnegative_and_support_compact(self, rng):
        diag = random_diagram(rng, dims=(1,))
        land = landscape(diag, 1)
        feats = diag.by_dim(1)
        if feats:
            lo = min(f[1] for f in feats)
            hi = max(f[2] for f in feats)
            assert land(lo - 0.1) == 0.0
            assert land(hi + 0.1) == 0.0
        assert all(y >= 0.0 for y in land.ys)

    def test_infinite_feature_rejected(self):
        with pytest.raises(ValidationError):
            landscape(diagram((0, 0.0, INF, 1)), 0)


class TestLandscapeGradient:
    def test_outside_support_zero(self):
        assert landscape_gradient(diagram((1, 0.5, 1.0, 1)), 1, 0.2) == 0.0

    def test_inside_single_feature(self):
        assert landscape_gradient(diagram((1, 0.0, 1.0, 2)), 1, 0.4) == 2.0

    def test_overlapping_features_sum(self):
        diag = diagram((1, 0.0, 1.0, 1), (1, 0.2, 0.8, 3))
        assert landscape_gradient(diag, 1, 0.5) == 4.0
        assert landscape_gradient(diag, 1, 0.9) == 1.0


class TestLandscapeL1:
    def test_identical_zero(self, rng):
        diag = random_diagram(rng, dims=(1,))
        land = landscape(diag, 1)
        assert landscape_l1(land, land) == pytest.approx(0.0, abs=1e-12)

    def test_single_tent_area(self):
        land = landscape(diagram((0, 0.0, 2.0, 1)), 0)
        zero = landscape(diagram(), 0)
        # Triangle with base 2 and height 1.
        assert landscape_l1(land, zero) == pytest.approx(1.0, abs=1e-12)

    def test_against_dense_quadrature(self, rng):
        for _ in range(10):
            l1 = landscape(random_diagram(rng, dims=(1,)), 1)
            l2 = landscape(random_diagram(rng, dims=(1,)), 1)
            exact = landscape_l1(l1, l2)
            xs = np.linspace(-0.2, 2.4, 40001)
            approx = np.trapezoid(np.abs(np.asarray(l1(xs)) - np.asarray(l2(xs))), xs)
            assert exact == pytest.approx(float(approx), abs=2e-4)

    def test_symmetry(self, rng):
        l1 = landscape(random_diagram(rng, dims=(0,)), 0)
        l2 = landscape(random_diagram(rng, dims=(0,)), 0)
        assert landscape_l1(l1, l2) == pytest.approx(landscape_l1(l2, l1), abs=1e-12)


class TestBottleneck:
    def test_identical_diagrams(self, rng):
        diag = random_diagram(rng)
        assert bottleneck_distance(diag, diag) == pytest.approx(0.0, abs=1e-12)

    def test_single_point_shift(self):
        d1 = diagram((0, 0.0, 2.0, 1))
        d2 = diagram((0, 0.0, 2.5, 1))
        assert bottleneck_distance(d1, d2) == pytest.approx(0.5)

    def test_point_versus_empty(self):
        d1 = diagram((1, 0.0, 2.0, 1))
        assert bottleneck_distance(d1, diagram()) == pytest.approx(1.0)

    def test_matches_bruteforce(self, rng):
        for _ in range(60):
            d1 = random_diagram(rng, max_pts=4)
            d2 = random_diagram(rng, max_pts=4)
            got = bottleneck_distance(d1, d2)
            expected = bottleneck_bruteforce(d1.features, d2.features)
            assert got == pytest.approx(expected, abs=1e-9)

    def test_dimensions_never_cross_match(self):
        d1 = diagram((0, 0.0, 1.0, 1))
        d2 = diagram((1, 0.0, 1.0, 1))
        # Each point must go to its own diagonal: max(0.5, 0.5).
        assert bottleneck_distance(d1, d2) == pytest.approx(0.5)

    def test_infinite_rejected(self):
        with pytest.raises(ValidationError):
            bottleneck_distance(diagram((0, 0.0, INF, 1)), diagram())


class TestWasserstein:
    def test_identical_zero(self, rng):
        diag = random_diagram(rng)
        assert wasserstein2(diag, diag) == pytest.approx(0.0, abs=1e-12)

    def test_diagonal_projection(self):
        # Point (0, 2) against the empty diagram: matched to (1, 1).
        d1 = diagram((0, 0.0, 2.0, 1))
        assert wasserstein2(d1, diagram()) == pytest.approx(math.sqrt(2.0), abs=1e-12)

    def test_matches_bruteforce(self, rng):
        for _ in range(60):
            d1 = random_diagram(rng, max_pts=4)
            d2 = random_diagram(rng, max_pts=4)
            got = wasserstein2(d1, d2)
            expected = wasserstein2_bruteforce(d1.features, d2.features)
            assert got == pytest.approx(expected, abs=1e-9)

    def test_bottleneck_below_wasserstein(self, rng):
        for _ in range(40):
            d1 = random_diagram(rng, max_pts=5)
            d2 = random_diagram(rng, max_pts=5)
            assert bottleneck_distance(d1, d2) <= wasserstein2(d1, d2) + 1e-9

    def test_multiplicity_expansion(self):
        d1 = diagram((0, 0.0, 1.0, 2))
        d2 = diagram((0, 0.0, 1.0, 1))
        # One copy matches, the other projects: sqrt(1/2).
        assert wasserstein2(d1, d2) == pytest.approx(math.sqrt(0.5), abs=1e-12)
