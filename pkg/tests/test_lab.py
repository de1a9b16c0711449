import numpy as np
import pytest

from qtfraud.errors import ExperimentError, ValidationError
from qtfraud.lab import (
    barren_plateau_scan,
    contractivity_check,
    descent_check,
    fidelity_distance_matrix,
    fixed_test_graph,
    pl_rate_demo,
    spearman_trend,
    stability_check,
)
from qtfraud.quantum.conv import LayerParams


def mixing_layer(g, angle=0.4):
    return LayerParams(
        theta={p: angle for p in g.undirected_pairs()},
        phi={v: 0.3 for v in g.nodes},
        psi={},
    )


class TestBarrenPlateau:
    def test_depth_one_has_signal(self):
        table = barren_plateau_scan([1], n_trials=25, init="random", seed=1)
        assert table[0]["variance"] > 0.0

    def test_scan_is_seeded(self):
        a = barren_plateau_scan([1, 2], n_trials=10, init="random", seed=9)
        b = barren_plateau_scan([1, 2], n_trials=10, init="random", seed=9)
        assert a == b

    def test_random_variance_decays(self):
        table = barren_plateau_scan([1, 4, 8], n_trials=30, init="random", seed=2)
        variances = [row["variance"] for row in table]
        assert variances[0] > variances[-1]

    def test_proximal_beats_random_at_depth(self):
        deep = [10]
        rand = barren_plateau_scan(deep, n_trials=30, init="random", seed=3)
        prox = barren_plateau_scan(deep, n_trials=30, init="identity_proximal", seed=3)
        assert prox[0]["variance"] >= rand[0]["variance"]

    def test_unknown_init_rejected(self):
        with pytest.raises(ValidationError):
            barren_plateau_scan([1], 5, init="warm", seed=0)

    def test_spearman_helper(self):
        table = [{"depth": d, "variance": 1.0 / d} for d in (1, 2, 4, 8)]
        rho, p = spearman_trend(table)
        assert rho == pytest.approx(-1.0)


class TestContractivity:
    def test_unitary_only_is_isometry(self):
        g = fixed_test_graph()
        report = contractivity_check(g, mixing_layer(g), p=0.0, n_pairs=100, seed=1)
        assert report["alpha_hat"] == pytest.approx(1.0, abs=1e-9)

    def test_never_expands(self):
        g = fixed_test_graph()
        report = contractivity_check(g, mixing_layer(g), p=0.7, n_pairs=150, seed=2)
        assert report["alpha_hat"] <= 1.0 + 1e-9

    def test_off_diagonal_strict_contraction_under_diagonal_unitary(self):
        g = fixed_test_graph()
        diag_layer = LayerParams(
            theta={p: 0.0 for p in g.undirected_pairs()},
            phi={v: 0.6 for v in g.nodes},
            psi={},
        )
        report = contractivity_check(g, diag_layer, p=0.5, n_pairs=100, seed=3,
                                     pair_kind="off_diagonal")
        assert report["alpha_hat"] == pytest.approx(0.5, abs=1e-9)
        assert report["geometric_ok"]

    def test_off_diagonal_generic_unitary_still_below_one(self):
        g = fixed_test_graph()
        report = contractivity_check(g, mixing_layer(g), p=0.5, n_pairs=100, seed=4,
                                     pair_kind="off_diagonal")
        assert report["alpha_hat"] < 1.0

    def test_geometric_bound_from_estimate(self):
        g = fixed_test_graph()
        diag_layer = LayerParams(
            theta={p: 0.0 for p in g.undirected_pairs()},
            phi={v: 0.2 for v in g.nodes},
            psi={},
        )
        report = contractivity_check(g, diag_layer, p=0.8, n_pairs=100, seed=5,
                                     pair_kind="off_diagonal")
        assert report["alpha_hat"] < 1.0
        assert report["geometric_ok"]
        assert report["final_gap"] <= report["initial_gap"]

    def test_too_few_pairs_rejected(self):
        g = fixed_test_graph()
        with pytest.raises(ValidationError):
            contractivity_check(g, mixing_layer(g), p=0.5, n_pairs=10)


class TestStability:
    def test_all_trials_within_delta(self):
        dm = fidelity_distance_matrix(8, seed=11)
        report = stability_check(dm, delta=0.05, n_trials=25, seed=12)
        assert report["max_ratio"] <= 1.0 + 1e-9

    def test_tiny_delta_continuity(self):
        dm = fidelity_distance_matrix(6, seed=13)
        report = stability_check(dm, delta=1e-6, n_trials=5, seed=14)
        assert report["max_ratio"] <= 1.0 + 1e-3

    def test_bad_delta_rejected(self):
        dm = fidelity_distance_matrix(5, seed=1)
        with pytest.raises(ValidationError):
            stability_check(dm, delta=0.5, n_trials=3)


class TestDescentCheck:
    def test_needs_fifty_steps(self):
        rows = [{"eta": 0.05, "grad_norm": 1.0}] * 20
        with pytest.raises(ExperimentError):
            descent_check(rows)

    def test_decaying_schedule_passes_trends(self):
        rows = [{"eta": 0.05 / np.sqrt(t + 1), "grad_norm": 2.0 / np.sqrt(t + 2)}
                for t in range(120)]
        report = descent_check(rows)
        assert report["eta_divergent"]
        assert report["eta_sq_convergent"]
        assert report["weighted_sublinear"]

    def test_constant_schedule_informative_failure(self):
        rows = [{"eta": 0.05, "grad_norm": 2.0}] * 120
        report = descent_check(rows)
        assert report["eta_divergent"]
        assert not report["eta_sq_convergent"]


class TestPlRate:
    def test_linear_rate_holds(self):
        report = pl_rate_demo(seed=5)
        assert report["passed"]
        assert 0.0 < report["mu"] <= report["smooth"]

    def test_seeded(self):
        assert pl_rate_demo(seed=2) == pl_rate_demo(seed=2)
