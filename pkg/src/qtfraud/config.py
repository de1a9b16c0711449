"""Run configuration: flat dotted-key text files with CLI overrides.

The format is one ``key = value`` assignment per line; values parse as
JSON when possible and fall back to bare strings. Lists accept either
JSON arrays or comma-separated tokens. ``parse_flat(serialize_flat(c))``
round-trips exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .features import ABLATIONS, FeatureConfig
from .graphs import PreprocessConfig, SyntheticConfig
from .model import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    source: str = "synthetic"  # "synthetic" | "csv"
    csv_path: str = ""
    csv_samples: int = 200  # subgraphs to draw from a CSV master graph
    n_graphs: int = 1000
    n_accounts: int = 8
    n_transactions: int = 14
    fraud_ratio: float = 0.01
    motifs: tuple[str, ...] = ("cycle", "star", "triangle")
    window: int = 4
    filter_threshold: float = 0.0
    normalize: bool = True
    kappa: float = 1.0
    capacity: int = 8
    layers: int = 2
    grid_size: int = 16
    ablation: str = "full"
    lambda1: float = 1.0
    lambda2: float = 1e-3
    eta0: float = 0.05
    sigma: float = 1.0
    delta: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    tau: float | None = None
    tau_quantile: float = 0.99
    t_max: int = 200
    eps_conv: float = 1e-6
    batch_size: int = 8
    theta_e_init: float = 1.2
    channel_logit_init: float = -2.2
    eval_k: int = 50
    seed: int = 0
    workers: int = 1
    output_dir: str = "out"

    def __post_init__(self) -> None:
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"dataset.source must be synthetic or csv, got {self.source!r}")
        if self.source == "csv" and not self.csv_path:
            raise ConfigError("dataset.path is required when dataset.source = csv")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(
            n_graphs=self.n_graphs,
            n_accounts=self.n_accounts,
            n_transactions=self.n_transactions,
            fraud_ratio=self.fraud_ratio,
            fraud_motifs=tuple(self.motifs),
            seed=self.seed,
        )

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig(
            window=self.window,
            filter_threshold=self.filter_threshold,
            min_max_normalize=self.normalize,
        )

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(
            capacity=self.capacity,
            n_layers=self.layers,
            eps_grid=tuple(np.linspace(0.0, 1.0, self.grid_size).tolist()),
            ablation=self.ablation,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lambda1=self.lambda1, lambda2=self.lambda2, eta0=self.eta0,
            sigma=self.sigma, delta=self.delta, alpha=self.alpha, beta=self.beta,
            tau=self.tau, tau_quantile=self.tau_quantile, t_max=self.t_max,
            eps_conv=self.eps_conv, batch_size=self.batch_size,
            theta_e_init=self.theta_e_init,
            channel_logit_init=self.channel_logit_init, seed=self.seed,
        )


# Mapping between dotted keys and RunConfig fields.
_KEYS = {
    "dataset.source": "source",
    "dataset.path": "csv_path",
    "dataset.samples": "csv_samples",
    "synthetic.n_graphs": "n_graphs",
    "synthetic.n_accounts": "n_accounts",
    "synthetic.n_transactions": "n_transactions",
    "synthetic.fraud_ratio": "fraud_ratio",
    "synthetic.motifs": "motifs",
    "preprocess.window": "window",
    "preprocess.filter_threshold": "filter_threshold",
    "preprocess.normalize": "normalize",
    "sample.kappa": "kappa",
    "model.capacity": "capacity",
    "model.layers": "layers",
    "model.grid_size": "grid_size",
    "model.ablation": "ablation",
    "train.lambda1": "lambda1",
    "train.lambda2": "lambda2",
    "train.eta0": "eta0",
    "train.sigma": "sigma",
    "train.delta": "delta",
    "train.alpha": "alpha",
    "train.beta": "beta",
    "train.tau": "tau",
    "train.tau_quantile": "tau_quantile",
    "train.t_max": "t_max",
    "train.eps_conv": "eps_conv",
    "train.batch_size": "batch_size",
    "train.theta_e_init": "theta_e_init",
    "train.channel_logit_init": "channel_logit_init",
    "eval.k": "eval_k",
    "seed": "seed",
    "workers": "workers",
    "output_dir": "output_dir",
}
_FIELDS = {v: k for k, v in _KEYS.items()}


def _parse_value(field_name: str, raw) -> object:
    if isinstance(raw, str):
        text = raw.strip()
        if field_name == "motifs":
            try:
                parsed = json.loads(text)
            except json.JSONDecodeError:
                parsed = [t.strip() for t in text.split(",") if t.strip()]
            return tuple(parsed)
        if text.lower() in ("none", "null"):
            return None
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            return text
    if field_name == "motifs":
        return tuple(raw)
    return raw


def parse_flat(text: str) -> RunConfig:
    """Parse ``key = value`` lines into a RunConfig."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        field_name = _KEYS[key]
        values[field_name] = _parse_value(field_name, raw)
    return RunConfig(**values)


def apply_overrides(cfg: RunConfig, pairs: list[str]) -> RunConfig:
    """Apply ``key=value`` override strings on top of a config."""
    updates: dict[str, object] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like key=value")
        key, _, raw = pair.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        field_name = _KEYS[key]
        updates[field_name] = _parse_value(field_name, raw)
    return replace(cfg, **updates)


def serialize_flat(cfg: RunConfig) -> str:
    lines = []
    data = asdict(cfg)
    for key in sorted(_KEYS):
        value = data[_KEYS[key]]
        if isinstance(value, tuple):
            value = list(value)
        lines.append(f"{key} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"
