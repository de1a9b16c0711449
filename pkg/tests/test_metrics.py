import io
import math

import numpy as np
import pytest

from qtfraud.errors import ValidationError
from qtfraud.metrics import (
    MetricsReport,
    confusion_counts,
    evaluate,
    log_loss,
    precision_at_k,
    rates_from_counts,
    roc_auc,
    write_report_csv,
)


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_constant_scores_half(self):
        assert roc_auc([0.5] * 10, [0, 1] * 5) == pytest.approx(0.5)

    def test_random_scores_near_half(self, rng):
        scores = rng.uniform(size=1000)
        labels = rng.integers(0, 2, size=1000)
        if labels.sum() in (0, 1000):
            labels[0] = 1 - labels[0]
        assert roc_auc(scores, labels) == pytest.approx(0.5, abs=0.05)

    def test_monotone_transform_invariance(self, rng):
        scores = rng.normal(size=200)
        labels = rng.integers(0, 2, size=200)
        labels[0], labels[1] = 0, 1
        a = roc_auc(scores, labels)
        b = roc_auc(np.exp(scores * 2.0) + 3.0, labels)
        assert a == pytest.approx(b, abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError, match="both classes"):
            roc_auc([0.1, 0.2], [1, 1])

    def test_matches_pair_counting_oracle(self, rng):
        scores = np.round(rng.uniform(size=60), 1)  # force ties
        labels = rng.integers(0, 2, size=60)
        labels[:2] = (0, 1)
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        wins = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
        assert roc_auc(scores, labels) == pytest.approx(wins / (len(pos) * len(neg)))


class TestPrecisionAtK:
    def test_top_k_all_fraud(self):
        assert precision_at_k([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0], 2) == 1.0

    def test_k_equals_length_gives_prevalence(self):
        labels = [1, 0, 0, 1, 0]
        assert precision_at_k([5, 4, 3, 2, 1], labels, 5) == pytest.approx(2 / 5)

    def test_stable_tie_breaking(self):
        # Equal scores: earlier index wins the slot.
        assert precision_at_k([1.0, 1.0, 1.0], [1, 0, 0], 1) == 1.0
        assert precision_at_k([1.0, 1.0, 1.0], [0, 1, 0], 1) == 0.0

    def test_sorting_oracle(self, rng):
        scores = rng.uniform(size=40)
        labels = rng.integers(0, 2, size=40)
        labels[:2] = (0, 1)
        k = 10
        order = sorted(range(40), key=lambda i: (-scores[i], i))
        expected = sum(labels[i] for i in order[:k]) / k
        assert precision_at_k(scores, labels, k) == pytest.approx(expected)

    def test_zero_k_rejected(self):
        with pytest.raises(ValidationError):
            precision_at_k([1.0], [1], 0)


class TestConfusionRates:
    def test_hand_case(self):
        # TP=2, FP=1, FN=1, TN=6.
        rates = rates_from_counts(2, 1, 1, 6)
        assert rates["precision"] == pytest.approx(2 / 3)
        assert rates["recall"] == pytest.approx(2 / 3)
        assert rates["f1"] == pytest.approx(2 / 3)
        assert rates["accuracy"] == pytest.approx(8 / 10)
        assert rates["fpr"] == pytest.approx(1 / 7)
        assert rates["mcc"] == pytest.approx(11 / 21)

    def test_perfect_classifier(self):
        rates = rates_from_counts(5, 0, 0, 5)
        for key in ("accuracy", "precision", "recall", "f1", "mcc"):
            assert rates[key] == 1.0
        assert rates["fpr"] == 0.0
        assert rates["degenerate_fields"] == ()

    def test_all_negative_predictions_flagged(self):
        rates = rates_from_counts(0, 0, 3, 7)
        assert rates["recall"] == 0.0
        assert rates["f1"] == 0.0
        assert "precision" in rates["degenerate_fields"]
        assert "mcc" in rates["degenerate_fields"]

    def test_strict_threshold(self):
        tp, fp, fn, tn = confusion_counts([0.5, 0.6], [1, 1], tau=0.5)
        assert (tp, fn) == (1, 1)  # score == tau is not flagged

    def test_f1_consistency(self, rng):
        scores = rng.uniform(size=50)
        labels = rng.integers(0, 2, size=50)
        labels[:2] = (0, 1)
        r = evaluate(scores, labels, k=5, tau=0.5)
        if r.precision + r.recall > 0:
            assert r.f1 == pytest.approx(
                2 * r.precision * r.recall / (r.precision + r.recall), abs=1e-12
            )

    def test_mcc_sign_flip_under_label_swap(self, rng):
        scores = rng.uniform(size=60)
        labels = rng.integers(0, 2, size=60)
        labels[:2] = (0, 1)
        tau = 0.4
        tp, fp, fn, tn = confusion_counts(scores, labels, tau)
        mcc = rates_from_counts(tp, fp, fn, tn)["mcc"]
        # Swap classes and flip scores/threshold; predictions invert except
        # exact boundary scores, avoided here by construction.
        tp2, fp2, fn2, tn2 = confusion_counts(-scores, 1 - labels, -tau)
        mcc2 = rates_from_counts(tp2, fp2, fn2, tn2)["mcc"]
        assert mcc2 == pytest.approx(mcc, abs=1e-12)


class TestLogLoss:
    def test_half_probabilities(self):
        assert log_loss([0.5, 0.5, 0.5], [1, 0, 1]) == pytest.approx(
            math.log(2.0), abs=1e-12
        )

    def test_exact_predictions_tiny_loss(self):
        assert log_loss([1.0, 0.0], [1, 0]) == pytest.approx(0.0, abs=1e-11)

    def test_three_sample_hand_case(self):
        expected = -(math.log(0.9) + math.log(0.9) + math.log(0.8)) / 3.0
        assert log_loss([0.9, 0.1, 0.8], [1, 0, 1]) == pytest.approx(expected, abs=1e-12)


class TestReport:
    def test_csv_round(self):
        report = evaluate([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0], k=2, tau=0.5,
                          probabilities=[0.9, 0.8, 0.1, 0.2])
        buf = io.StringIO()
        write_report_csv(buf, report)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0].split(",") == list(MetricsReport.CSV_COLUMNS)
        values = [float(v) for v in lines[1].split(",")]
        assert values[0] == 1.0  # f1 of a perfect classifier
