import json
import math

import numpy as np
import pytest

from qtfraud.errors import ConfigError, ValidationError
from qtfraud.features import (
    FeatureConfig,
    GraphFeaturizer,
    block_slices,
    build_feature_vector,
    classical_node_features,
    feature_length,
)
from qtfraud.graphs import (
    PreprocessConfig,
    SyntheticConfig,
    generate_synthetic,
    preprocess,
)
from qtfraud.model import (
    ModelParams,
    NormalReference,
    TrainConfig,
    _batch_signatures,
    _reference_inputs,
    anomaly_score,
    attribute,
    decide,
    gradient,
    graph_layers,
    hypothesis_test,
    init_params,
    kernel_similarity,
    load_model,
    loss,
    loss_parts,
    save_model,
    train,
)
from qtfraud.topology.landscapes import landscape_l1
from qtfraud.topology.matching import wasserstein2

from conftest import make_graph
from oracles import finite_difference_gradient


def toy_dataset(n=20, seed=11, fraud_ratio=0.25, accounts=5):
    cfg = SyntheticConfig(n_graphs=n, n_accounts=accounts, n_transactions=8,
                          fraud_ratio=fraud_ratio, fraud_motifs=("cycle", "triangle"),
                          seed=seed)
    return [(preprocess(g, PreprocessConfig(window=4)), y)
            for g, y in generate_synthetic(cfg)]


@pytest.fixture(scope="module")
def trained():
    pairs = toy_dataset()
    fc = FeatureConfig(capacity=5, n_layers=2)
    tc = TrainConfig(t_max=4, batch_size=4, seed=3)
    model, log = train(pairs, fc, tc)
    return pairs, model, log


class TestFeatureVector:
    def test_deterministic(self):
        pairs = toy_dataset(n=4)
        g = pairs[0][0]
        fc = FeatureConfig(capacity=5, n_layers=1)
        params = init_params(fc, TrainConfig(seed=1))
        layers = graph_layers(g, params, fc.capacity)
        v1 = build_feature_vector(g, params.theta_e, layers, fc)
        v2 = build_feature_vector(g, params.theta_e, layers, fc)
        assert np.array_equal(v1, v2)

    def test_padding_for_small_graphs(self):
        g = make_graph([("a", "b", 1.0)], bias={"a": 0.5, "b": 0.5})
        fc = FeatureConfig(capacity=6, n_layers=1)
        params = init_params(fc, TrainConfig(seed=2))
        v = build_feature_vector(g, params.theta_e, graph_layers(g, params, 6), fc)
        sl = block_slices(fc)
        bloch = v[sl["bloch"]].reshape(6, 3)
        assert np.all(bloch[2:] == 0.0)  # unused node slots stay zero
        assert v.size == feature_length(fc)

    def test_betti_entries_match_diagram(self):
        from qtfraud.features import graph_signature

        pairs = toy_dataset(n=3)
        g = pairs[0][0]
        fc = FeatureConfig(capacity=5, n_layers=1)
        params = init_params(fc, TrainConfig(seed=5))
        sig = graph_signature(g, params.theta_e, graph_layers(g, params, 5), fc)
        sl = block_slices(fc)
        for idx, eps in enumerate(fc.eps_grid):
            assert sig.phi[sl["betti0"]][idx] == sig.diagram.betti(0, eps)
            assert sig.phi[sl["betti1"]][idx] == sig.diagram.betti(1, eps)

    def test_capacity_enforced(self):
        g = toy_dataset(n=1, accounts=6)[0][0]
        fc = FeatureConfig(capacity=5, n_layers=1)
        params = init_params(fc, TrainConfig(seed=1))
        from qtfraud.errors import CapacityError

        with pytest.raises(CapacityError):
            build_feature_vector(g, params.theta_e, [], fc)

    def test_no_topology_blocks_zero(self):
        pairs = toy_dataset(n=2)
        g = pairs[0][0]
        fc = FeatureConfig(capacity=5, n_layers=1, ablation="no_topology")
        params = init_params(fc, TrainConfig(seed=1))
        v = build_feature_vector(g, params.theta_e, graph_layers(g, params, 5), fc)
        sl = block_slices(fc)
        for name in ("betti0", "betti1", "euler", "w2"):
            assert np.all(v[sl[name]] == 0.0)

    def test_classical_embedding_features(self):
        g = make_graph([("a", "b", 1.0), ("b", "c", 0.5), ("a", "c", 0.8)],
                       bias={"a": 0.4, "b": 0.3, "c": 0.3})
        feats = classical_node_features(g)
        assert feats.shape == (3, 3)
        assert np.all(feats[:, 2] == 1.0)  # triangle: clustering coefficient 1

    def test_featurizer_transform_shapes(self):
        pairs = toy_dataset(n=6)
        graphs = [g for g, _ in pairs]
        labels = [y for _, y in pairs]
        fz = GraphFeaturizer(theta_e=0.3, capacity=5, n_layers=1)
        mat = fz.fit(graphs, labels).transform(graphs)
        assert mat.shape == (6, feature_length(fz._cfg()))
        params = fz.get_params()
        assert params["theta_e"] == 0.3


class TestKernelAndHypothesis:
    def _ref(self, vectors):
        arr = np.asarray(vectors, dtype=float)
        return NormalReference(
            vectors=arr,
            diagrams=[None] * len(arr),
            pooled=None,
            centroid=arr.mean(axis=0),
        )

    def test_member_of_singleton_reference(self):
        phi = np.array([1.0, 2.0])
        assert kernel_similarity(phi, self._ref([phi]), sigma=1.0) == 1.0

    def test_distance_sigma_gives_inverse_e(self):
        phi = np.zeros(2)
        ref = self._ref([[2.0, 0.0]])
        assert kernel_similarity(phi, ref, sigma=2.0) == pytest.approx(
            math.exp(-1.0), abs=1e-12
        )

    def test_min_over_members_bruteforce(self, rng):
        vectors = rng.normal(size=(10, 4))
        phi = rng.normal(size=4)
        ref = self._ref(vectors)
        sigma = 1.3
        expected = min(
            math.exp(-float(np.sum((phi - v) ** 2)) / sigma ** 2) for v in vectors
        )
        assert kernel_similarity(phi, ref, sigma) == pytest.approx(expected, rel=1e-12)

    def test_hypothesis_boundary_goes_to_null(self):
        phi = np.zeros(2)
        ref = self._ref([[0.0, 0.0]])
        # K = 1 exactly; delta = 1 would need K >= 1 -> H0 on the boundary.
        assert hypothesis_test(phi, ref, delta=0.999999, sigma=1.0) == "H0"

    def test_far_point_flagged(self):
        phi = np.full(2, 50.0)
        ref = self._ref([[0.0, 0.0]])
        assert hypothesis_test(phi, ref, delta=0.5, sigma=1.0) == "H1"

    def test_empty_reference_rejected(self):
        ref = NormalReference(vectors=np.zeros((0, 2)), diagrams=[], pooled=None,
                              centroid=np.zeros(2))
        with pytest.raises(ValidationError):
            kernel_similarity(np.zeros(2), ref, 1.0)


class TestLoss:
    def _params(self, fc, head=None):
        p = init_params(fc, TrainConfig(seed=9))
        if head is not None:
            p.head_w = head
        return p

    def test_hand_computed_two_sample_batch(self):
        fc = FeatureConfig(capacity=2, n_layers=1, eps_grid=(0.0, 1.0))
        params = self._params(fc)
        nfeat = feature_length(fc)
        params.head_w = np.zeros(nfeat)
        params.head_w[0] = 1.0
        params.head_b = -0.5
        phi = np.zeros((2, nfeat))
        phi[0, 0] = 2.0
        phi[1, 0] = -1.0
        labels = np.array([1, 0])
        centroid = np.full(nfeat, 0.25)
        cfg = TrainConfig(lambda1=0.7, lambda2=0.01)
        p1 = 1.0 / (1.0 + math.exp(-(2.0 - 0.5)))
        p2 = 1.0 / (1.0 + math.exp(-(-1.0 - 0.5)))
        l_sup = -0.5 * (math.log(p1) + math.log(1.0 - p2))
        l_unsup = float(np.sum((phi[1] - centroid) ** 2))
        reg = sum(
            float(l.theta_pair @ l.theta_pair + l.phi @ l.phi + l.psi @ l.psi)
            + l.channel_logit ** 2 for l in params.layers
        ) + float(params.head_w @ params.head_w) + params.head_b ** 2
        expected = l_sup + 0.7 * l_unsup + 0.01 * reg
        assert loss(phi, labels, params, cfg, centroid) == pytest.approx(expected, abs=1e-12)

    def test_perfect_confidence_limit(self):
        fc = FeatureConfig(capacity=2, n_layers=1, eps_grid=(0.0, 1.0))
        params = self._params(fc)
        nfeat = feature_length(fc)
        params.head_w = np.zeros(nfeat)
        params.head_w[0] = 50.0
        for layer in params.layers:  # zero the regularized params
            layer.theta_pair[:] = 0.0
            layer.phi[:] = 0.0
            layer.psi[:] = 0.0
            layer.channel_logit = 0.0
        phi = np.zeros((2, nfeat))
        phi[0, 0] = 1.0
        phi[1, 0] = -1.0
        cfg = TrainConfig(lambda1=0.0, lambda2=0.0)
        val = loss(phi, np.array([1, 0]), params, cfg, np.zeros(nfeat))
        assert val < 1e-9

    def test_zero_params_zero_regularizer(self):
        fc = FeatureConfig(capacity=2, n_layers=1, eps_grid=(0.0, 1.0))
        params = self._params(fc)
        for layer in params.layers:
            layer.theta_pair[:] = 0.0
            layer.phi[:] = 0.0
            layer.psi[:] = 0.0
            layer.channel_logit = 0.0
        params.head_w[:] = 0.0
        params.head_b = 0.0
        nfeat = feature_length(fc)
        parts = loss_parts(np.zeros((1, nfeat)), np.array([0]), params,
                           TrainConfig(lambda2=5.0), np.zeros(nfeat))
        assert parts["reg"] == 0.0


class TestGradient:
    def test_matches_finite_difference_oracle(self):
        pairs = toy_dataset(n=6, seed=21, accounts=5)
        graphs = [g for g, _ in pairs]
        labels = np.array([y for _, y in pairs])
        if labels.sum() == 0:
            labels[0] = 1
        fc = FeatureConfig(capacity=5, n_layers=2)
        tc = TrainConfig(seed=7)
        params = init_params(fc, tc)
        head_rng = np.random.default_rng(5)
        params.head_w = head_rng.normal(scale=0.2, size=params.head_w.size)
        params.head_b = 0.1
        ref, centroid = _reference_inputs(graphs, labels, params, fc)

        got = gradient(graphs, labels, params, fc, tc, centroid, ref)

        def loss_fn(vec):
            p = ModelParams.from_flat(vec, fc)
            sigs, _ = _batch_signatures(graphs, p, fc, ref)
            return loss(np.vstack([s.phi for s in sigs]), labels, p, tc, centroid)

        oracle = finite_difference_gradient(loss_fn, params.flatten(), step=1e-5)
        for i, (a, b) in enumerate(zip(got, oracle)):
            assert abs(a - b) <= max(1e-3 * max(abs(a), abs(b)), 1e-6), (
                f"coordinate {params.names(fc)[i]}: {a} vs oracle {b}"
            )

    def test_regularizer_block_gradient(self):
        # Slots no batch graph touches carry exactly the 2*lambda2*theta term.
        pairs = toy_dataset(n=2, seed=4, accounts=4)
        graphs = [g for g, _ in pairs]
        labels = np.array([0, 1])
        fc = FeatureConfig(capacity=6, n_layers=1)  # capacity above graph size
        tc = TrainConfig(seed=1, lambda2=0.5)
        params = init_params(fc, tc)
        ref, centroid = _reference_inputs(graphs, labels, params, fc)
        grad = gradient(graphs, labels, params, fc, tc, centroid, ref)
        names = params.names(fc)
        flat = params.flatten()
        # phi slot for qubit index 5 is untouched by 4-node graphs.
        idx = names.index("L0.phi[5]")
        assert grad[idx] == pytest.approx(2.0 * 0.5 * flat[idx], abs=1e-12)

    def test_zero_head_balanced_batch_bias_gradient(self):
        pairs = toy_dataset(n=4, seed=6, accounts=4)
        graphs = [g for g, _ in pairs][:2]
        labels = np.array([0, 1])
        fc = FeatureConfig(capacity=4, n_layers=1)
        tc = TrainConfig(seed=2, lambda1=0.0, lambda2=0.0)
        params = init_params(fc, tc)
        params.head_w[:] = 0.0
        params.head_b = 0.0
        ref, centroid = _reference_inputs(graphs, labels, params, fc)
        grad = gradient(graphs, labels, params, fc, tc, centroid, ref)
        assert grad[-1] == pytest.approx(0.0, abs=1e-9)


class TestTrain:
    def test_tmax_zero_keeps_initial_params(self):
        pairs = toy_dataset(n=8, seed=13)
        fc = FeatureConfig(capacity=5, n_layers=1)
        tc = TrainConfig(t_max=0, seed=5)
        model, log = train(pairs, fc, tc)
        assert log == []
        expected = init_params(fc, tc)
        assert np.array_equal(model.params.flatten(), expected.flatten())

    def test_single_class_rejected(self):
        pairs = [(g, 0) for g, _ in toy_dataset(n=5)]
        with pytest.raises(ConfigError):
            train(pairs, FeatureConfig(capacity=5, n_layers=1), TrainConfig(t_max=1))

    def test_deterministic_trajectories(self):
        pairs = toy_dataset(n=10, seed=17)
        fc = FeatureConfig(capacity=5, n_layers=1)
        tc = TrainConfig(t_max=3, batch_size=3, seed=8)
        m1, log1 = train(pairs, fc, tc)
        m2, log2 = train(pairs, fc, tc)
        assert np.array_equal(m1.params.flatten(), m2.params.flatten())
        assert log1 == log2

    def test_supervised_loss_decreases(self, trained):
        pairs, model, log = trained
        assert len(log) >= 2
        # Head learning drives the supervised term below its ln(2) start.
        assert log[-1]["loss_sup"] < log[0]["loss_sup"]


class TestScoring:
    def test_self_score_reduces_to_w2_term(self, trained):
        pairs, model, _ = trained
        normals = [g for g, y in pairs if y == 0]
        s, info = anomaly_score(normals[0], model)
        # The graph's own features sit in the reference, so the nearest
        # base distance and landscape terms vanish.
        assert info["base"] == pytest.approx(0.0, abs=1e-16)
        assert s == pytest.approx(info["w2_term"], abs=1e-12)

    def test_degenerate_weights_reduce_to_nearest_distance(self, trained):
        pairs, model, _ = trained
        from dataclasses import replace

        plain = replace(model.train_cfg, alpha=0.0, beta=0.0)
        from qtfraud.model import TrainedModel

        stripped = TrainedModel(params=model.params, feature_cfg=model.feature_cfg,
                                train_cfg=plain, reference=model.reference,
                                tau=model.tau)
        g = pairs[1][0]
        sig = stripped.signature(g)
        s, _ = anomaly_score(g, stripped, signature=sig)
        expected = float(np.min(np.sum(
            (model.reference.vectors - sig.phi) ** 2, axis=1)))
        assert s == pytest.approx(expected, rel=1e-12)

    def test_exhaustive_three_reference_oracle(self, trained):
        pairs, model, _ = trained
        from qtfraud.model import TrainedModel

        ref3 = NormalReference(
            vectors=model.reference.vectors[:3],
            diagrams=model.reference.diagrams[:3],
            pooled=model.reference.pooled,
            centroid=model.reference.vectors[:3].mean(axis=0),
        )
        small = TrainedModel(params=model.params, feature_cfg=model.feature_cfg,
                             train_cfg=model.train_cfg, reference=ref3, tau=model.tau)
        g = pairs[2][0]
        sig = small.signature(g)
        s, _ = anomaly_score(g, small, signature=sig)
        cfg = model.train_cfg
        totals = []
        for j in range(3):
            base = float(np.sum((ref3.vectors[j] - sig.phi) ** 2))
            land = sum(
                landscape_l1(sig.landscape_for(k), ref3.landscape_for(j, k))
                for k in (0, 1)
            )
            totals.append(base + cfg.alpha * land)
        expected = min(totals) + cfg.beta * wasserstein2(sig.diagram, ref3.pooled)
        assert s == pytest.approx(expected, rel=1e-10)

    def test_monotone_in_beta(self, trained):
        pairs, model, _ = trained
        from dataclasses import replace
        from qtfraud.model import TrainedModel

        g = pairs[3][0]
        scores = []
        for beta in (0.0, 0.5, 1.0, 2.0):
            m = TrainedModel(params=model.params, feature_cfg=model.feature_cfg,
                             train_cfg=replace(model.train_cfg, beta=beta),
                             reference=model.reference, tau=model.tau)
            scores.append(anomaly_score(g, m)[0])
        assert all(a <= b + 1e-12 for a, b in zip(scores, scores[1:]))

    def test_reference_order_invariance(self, trained):
        pairs, model, _ = trained
        from qtfraud.model import TrainedModel

        order = np.argsort(-model.reference.vectors[:, 0], kind="stable")
        shuffled = NormalReference(
            vectors=model.reference.vectors[order],
            diagrams=[model.reference.diagrams[i] for i in order],
            pooled=model.reference.pooled,
            centroid=model.reference.centroid,
        )
        m2 = TrainedModel(params=model.params, feature_cfg=model.feature_cfg,
                          train_cfg=model.train_cfg, reference=shuffled, tau=model.tau)
        g = pairs[4][0]
        s1, _ = anomaly_score(g, model)
        s2, _ = anomaly_score(g, m2)
        assert decide(s1, model.tau) == decide(s2, model.tau)
        assert s1 == pytest.approx(s2, rel=1e-10)

    def test_decide_strict(self):
        assert decide(1.0, 1.0) == 0
        assert decide(1.0 + 1e-9, 1.0) == 1
        assert decide(0.5, 0.0) == 1

    def test_threshold_shift_consistency(self, trained):
        pairs, model, _ = trained
        scores = [anomaly_score(g, model)[0] for g, _ in pairs[:6]]
        shift = 3.7
        before = [decide(s, model.tau) for s in scores]
        after = [decide(s + shift, model.tau + shift) for s in scores]
        assert before == after


class TestAttribution:
    def test_contributions_sum_to_total(self, trained):
        pairs, model, _ = trained
        for g, _ in pairs[:5]:
            rep = attribute(g, model)
            total = sum(c.l1_share for c in rep.contributions) + rep.l1_residual
            assert total == pytest.approx(rep.l1_total, abs=1e-9)

    def test_top_features_ranked_by_persistence(self, trained):
        pairs, model, _ = trained
        rep = attribute(pairs[0][0], model)
        weights = [f.persistence * f.mult for f in rep.top_features]
        assert weights == sorted(weights, reverse=True)

    def test_gradient_samples_on_grid(self, trained):
        pairs, model, _ = trained
        rep = attribute(pairs[0][0], model)
        for k, samples in rep.gradient_samples.items():
            assert len(samples) == len(model.feature_cfg.eps_grid)


class TestPersistenceOfModel:
    def test_roundtrip_bytes(self, trained, tmp_path):
        _, model, _ = trained
        p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
        save_model(p1, model)
        save_model(p2, load_model(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_scores_survive_roundtrip(self, trained, tmp_path):
        pairs, model, _ = trained
        path = tmp_path / "m.json"
        save_model(path, model)
        back = load_model(path)
        g = pairs[0][0]
        assert anomaly_score(g, back)[0] == pytest.approx(
            anomaly_score(g, model)[0], rel=1e-12
        )


class TestDetectorEstimator:
    def test_fit_predict_flow(self):
        from qtfraud.detector import FraudDetector

        pairs = toy_dataset(n=12, seed=19)
        graphs = [g for g, _ in pairs]
        labels = [y for _, y in pairs]
        det = FraudDetector(capacity=5, n_layers=1, t_max=2, batch_size=4, seed=1)
        assert det.fit(graphs, labels) is det
        scores = det.score_samples(graphs)
        assert scores.shape == (12,)
        preds = det.predict(graphs)
        assert set(np.unique(preds)) <= {0, 1}

    def test_not_fitted_errors(self):
        from sklearn.exceptions import NotFittedError
        from qtfraud.detector import FraudDetector

        det = FraudDetector()
        with pytest.raises(NotFittedError):
            det.score_samples([])

    def test_get_set_params_roundtrip(self):
        from qtfraud.detector import FraudDetector

        det = FraudDetector(eta0=0.2, ablation="no_topology")
        params = det.get_params()
        assert params["eta0"] == 0.2
        det.set_params(eta0=0.1)
        assert det.eta0 == 0.1

    def test_sklearn_clone(self):
        from sklearn.base import clone
        from qtfraud.detector import FraudDetector

        det = FraudDetector(eta0=0.33, seed=4)
        cloned = clone(det)
        assert cloned.eta0 == 0.33 and cloned.seed == 4
