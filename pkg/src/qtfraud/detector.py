"""Scikit-learn style estimator around the training and scoring pipeline.

``FraudDetector`` consumes lists of :class:`TransactionGraph` instead of
numeric arrays, so only the estimator conventions that make sense here
are implemented: constructor params stored verbatim, ``fit`` returning
self, fitted attributes carrying trailing underscores, ``get_params`` /
``set_params`` via BaseEstimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .features import FeatureConfig
from .graphs import TransactionGraph
from .model import (
    AttributionReport,
    TrainConfig,
    anomaly_score,
    attribute,
    decide,
    hypothesis_test,
    kernel_similarity,
    train,
)


class FraudDetector(BaseEstimator):
    """Graph anomaly detector over quantum and topological features.

    ``score_samples`` returns anomaly scores (larger means more anomalous)
    and ``predict`` flags scores strictly above the threshold. The
    threshold defaults to a quantile of leave-one-out scores over the
    training normals; pass ``tau`` to pin it.
    """

    def __init__(
        self,
        capacity: int = 8,
        n_layers: int = 2,
        grid_size: int = 16,
        ablation: str = "full",
        lambda1: float = 1.0,
        lambda2: float = 1e-3,
        eta0: float = 0.05,
        sigma: float = 1.0,
        delta: float = 0.5,
        alpha: float = 1.0,
        beta: float = 1.0,
        tau: float | None = None,
        tau_quantile: float = 0.99,
        t_max: int = 200,
        eps_conv: float = 1e-6,
        batch_size: int = 8,
        seed: int = 0,
    ):
        self.capacity = capacity
        self.n_layers = n_layers
        self.grid_size = grid_size
        self.ablation = ablation
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.eta0 = eta0
        self.sigma = sigma
        self.delta = delta
        self.alpha = alpha
        self.beta = beta
        self.tau = tau
        self.tau_quantile = tau_quantile
        self.t_max = t_max
        self.eps_conv = eps_conv
        self.batch_size = batch_size
        self.seed = seed

    def _configs(self) -> tuple[FeatureConfig, TrainConfig]:
        feature_cfg = FeatureConfig(
            capacity=self.capacity,
            n_layers=self.n_layers,
            eps_grid=tuple(np.linspace(0.0, 1.0, self.grid_size).tolist()),
            ablation=self.ablation,
        )
        train_cfg = TrainConfig(
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            eta0=self.eta0,
            sigma=self.sigma,
            delta=self.delta,
            alpha=self.alpha,
            beta=self.beta,
            tau=self.tau,
            tau_quantile=self.tau_quantile,
            t_max=self.t_max,
            eps_conv=self.eps_conv,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        return feature_cfg, train_cfg

    def fit(self, X, y):
        """Train on graphs ``X`` with binary labels ``y`` (1 = fraud)."""
        feature_cfg, train_cfg = self._configs()
        dataset = list(zip(X, (int(v) for v in y)))
        self.model_, self.training_log_ = train(dataset, feature_cfg, train_cfg)
        self.tau_ = self.model_.tau
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("FraudDetector is not fitted; call fit first")
        return self.model_

    def score_samples(self, X) -> np.ndarray:
        model = self._require_fitted()
        return np.array([anomaly_score(g, model)[0] for g in X])

    def predict(self, X) -> np.ndarray:
        model = self._require_fitted()
        return np.array([decide(s, model.tau) for s in self.score_samples(X)])

    def attribute(self, graph: TransactionGraph) -> AttributionReport:
        model = self._require_fitted()
        return attribute(graph, model)

    def kernel_similarity(self, graph: TransactionGraph) -> float:
        model = self._require_fitted()
        sig = model.signature(graph)
        return kernel_similarity(sig.phi, model.reference, model.train_cfg.sigma)

    def hypothesis_test(self, graph: TransactionGraph) -> str:
        model = self._require_fitted()
        sig = model.signature(graph)
        return hypothesis_test(
            sig.phi, model.reference, model.train_cfg.delta, model.train_cfg.sigma
        )
