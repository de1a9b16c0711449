"""Hybrid anomaly learning: loss, gradients, training, scoring, attribution.

Trainable parameters live in capacity-indexed slot arrays (one angle per
qubit pair, per qubit, per qubit triple and per layer, plus the encoding
angle and a linear head over the feature vector). A graph uses the slots
its nodes, edges and triangles touch, so one model applies across graphs
of varying shape.

Gradients are analytic for the head and the quadratic regularizer and
central finite differences (step ``fd_step``) for the circuit parameters.
The layer unitary is a single fused matrix exponential, so rotation-shift
identities are not exact for the hybrid loss; finite differences are, up
to O(step^2), which is what the acceptance checks require.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from ._rng import substream
from .errors import ConfigError, TrainingError, ValidationError
from .features import (
    FeatureConfig,
    GraphSignature,
    PipelineCache,
    block_slices,
    classical_signature,
    feature_length,
    graph_signature,
    pair_slots,
    run_quantum,
    signature_from_state,
)
from .graphs import TransactionGraph
from .quantum.conv import LayerParams
from .topology.landscapes import LandscapeFunction, landscape, landscape_l1
from .topology.matching import wasserstein2
from .topology.persistence import (
    PersistenceDiagram,
    diagram_from_lists,
    diagram_to_lists,
)

REFERENCE_DIAGRAM_SIZE = 50  # pooled diagram keeps this many most-persistent features


def triple_slots(capacity: int) -> list[tuple[int, int, int]]:
    return list(combinations(range(capacity), 3))


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and scoring knobs; spec of the defaults is plain config."""

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
    fd_step: float = 1e-4
    theta_e_init: float = 1.2
    channel_logit_init: float = -2.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0 or self.alpha < 0 or self.beta < 0:
            raise ConfigError("lambda1, lambda2, alpha, beta must be >= 0")
        if self.eta0 <= 0 or self.sigma <= 0 or self.eps_conv <= 0 or self.fd_step <= 0:
            raise ConfigError("eta0, sigma, eps_conv, fd_step must be > 0")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must be in (0,1), got {self.delta}")
        if self.t_max < 0 or self.batch_size < 1:
            raise ConfigError("t_max must be >= 0 and batch_size >= 1")
        if not 0.0 < self.tau_quantile <= 1.0:
            raise ConfigError("tau_quantile must be in (0,1]")


@dataclass
class LayerSlots:
    """Per-layer angles over all capacity slots."""

    theta_pair: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    channel_logit: float


@dataclass
class ModelParams:
    theta_e: float
    layers: list[LayerSlots]
    head_w: np.ndarray
    head_b: float

    def copy(self) -> "ModelParams":
        return ModelParams(
            theta_e=self.theta_e,
            layers=[
                LayerSlots(l.theta_pair.copy(), l.phi.copy(), l.psi.copy(), l.channel_logit)
                for l in self.layers
            ],
            head_w=self.head_w.copy(),
            head_b=self.head_b,
        )

    def flatten(self) -> np.ndarray:
        parts = [np.array([self.theta_e])]
        for l in self.layers:
            parts.extend((l.theta_pair, l.phi, l.psi, np.array([l.channel_logit])))
        parts.extend((self.head_w, np.array([self.head_b])))
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, vec: np.ndarray, cfg: FeatureConfig) -> "ModelParams":
        npair = len(pair_slots(cfg.capacity))
        ntri = len(triple_slots(cfg.capacity))
        nfeat = feature_length(cfg)
        pos = 0

        def take(k: int) -> np.ndarray:
            nonlocal pos
            out = vec[pos:pos + k]
            pos += k
            return np.asarray(out, dtype=float).copy()

        theta_e = float(take(1)[0])
        layers = []
        for _ in range(cfg.n_layers):
            layers.append(
                LayerSlots(
                    theta_pair=take(npair),
                    phi=take(cfg.capacity),
                    psi=take(ntri),
                    channel_logit=float(take(1)[0]),
                )
            )
        head_w = take(nfeat)
        head_b = float(take(1)[0])
        if pos != vec.size:
            raise ValidationError(f"flat parameter vector has {vec.size} entries, expected {pos}")
        return cls(theta_e=theta_e, layers=layers, head_w=head_w, head_b=head_b)

    def names(self, cfg: FeatureConfig) -> list[str]:
        out = ["theta_e"]
        pairs = pair_slots(cfg.capacity)
        triples = triple_slots(cfg.capacity)
        for l in range(cfg.n_layers):
            out.extend(f"L{l}.theta[{i},{j}]" for i, j in pairs)
            out.extend(f"L{l}.phi[{i}]" for i in range(cfg.capacity))
            out.extend(f"L{l}.psi[{i},{j},{k}]" for i, j, k in triples)
            out.append(f"L{l}.channel_logit")
        out.extend(f"head.w[{i}]" for i in range(feature_length(cfg)))
        out.append("head.b")
        return out


def init_params(feature_cfg: FeatureConfig, train_cfg: TrainConfig) -> ModelParams:
    """Identity-proximal layer angles, zero head.

    The layer angles start in uniform(-0.1, 0.1), which keeps gradient
    variance alive at depth. The encoding angle is a single un-stacked
    parameter with no plateau at stake and starts at ``theta_e_init``: a
    near-zero encoding would leave every downstream feature blind to the
    transaction weights. The channel logit starts at mild dephasing.
    """
    rng = substream(train_cfg.seed, "init")
    npair = len(pair_slots(feature_cfg.capacity))
    ntri = len(triple_slots(feature_cfg.capacity))
    layers = [
        LayerSlots(
            theta_pair=rng.uniform(-0.1, 0.1, size=npair),
            phi=rng.uniform(-0.1, 0.1, size=feature_cfg.capacity),
            psi=rng.uniform(-0.1, 0.1, size=ntri),
            channel_logit=train_cfg.channel_logit_init + float(rng.uniform(-0.1, 0.1)),
        )
        for _ in range(feature_cfg.n_layers)
    ]
    return ModelParams(
        theta_e=train_cfg.theta_e_init,
        layers=layers,
        head_w=np.zeros(feature_length(feature_cfg)),
        head_b=0.0,
    )


def layer_params_for(g: TransactionGraph, slots: LayerSlots, capacity: int) -> LayerParams:
    """Restrict one layer's slot arrays to the pairs/nodes/triangles of g."""
    order = g.qubit_order()
    idx = {v: i for i, v in enumerate(order)}
    pair_index = {p: s for s, p in enumerate(pair_slots(capacity))}
    tri_index = {t: s for s, t in enumerate(triple_slots(capacity))}
    theta = {}
    for u, v in g.undirected_pairs():
        key = tuple(sorted((idx[u], idx[v])))
        theta[(u, v)] = float(slots.theta_pair[pair_index[key]])
    phi = {v: float(slots.phi[idx[v]]) for v in order}
    psi = {}
    for a, b, c, _ in g.triangles:
        names = tuple(sorted((a, b, c)))
        key = tuple(sorted(idx[x] for x in names))
        psi[names] = float(slots.psi[tri_index[key]])
    return LayerParams(theta=theta, phi=phi, psi=psi, channel_logit=slots.channel_logit)


def graph_layers(g: TransactionGraph, params: ModelParams, capacity: int) -> list[LayerParams]:
    return [layer_params_for(g, slots, capacity) for slots in params.layers]


# ---------------------------------------------------------------------------
# Reference set


@dataclass
class NormalReference:
    """Training normals: vectors, per-graph diagrams, pooled diagram, centroid."""

    vectors: np.ndarray
    diagrams: list[PersistenceDiagram | None]
    pooled: PersistenceDiagram | None
    centroid: np.ndarray
    _landscapes: list[dict[int, LandscapeFunction]] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def landscape_for(self, ref_index: int, k: int) -> LandscapeFunction:
        while len(self._landscapes) < len(self):
            self._landscapes.append({})
        cache = self._landscapes[ref_index]
        if k not in cache:
            diag = self.diagrams[ref_index]
            cache[k] = (
                landscape(diag, k) if diag is not None else LandscapeFunction((), (), k)
            )
        return cache[k]


def pool_diagrams(
    diagrams: list[PersistenceDiagram], keep: int = REFERENCE_DIAGRAM_SIZE
) -> PersistenceDiagram:
    """Union multiset of features, downsampled to the most persistent ones."""
    feats: list[tuple[int, float, float, int]] = []
    for d in diagrams:
        feats.extend(d.features)
    feats.sort(key=lambda f: (-(f[2] - f[1]) * f[3], f))
    kept = sorted(feats[:keep])
    merged: dict[tuple[int, float, float], int] = {}
    for dim, b, dth, m in kept:
        merged[(dim, b, dth)] = merged.get((dim, b, dth), 0) + m
    return PersistenceDiagram(tuple(sorted((d, b, dt, m) for (d, b, dt), m in merged.items())))


# ---------------------------------------------------------------------------
# Loss


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def regularizer(params: ModelParams) -> float:
    """Sum of squared layer parameters and head weights (encoding angle excluded)."""
    total = 0.0
    for l in params.layers:
        total += float(l.theta_pair @ l.theta_pair + l.phi @ l.phi + l.psi @ l.psi)
        total += l.channel_logit ** 2
    total += float(params.head_w @ params.head_w) + params.head_b ** 2
    return total


def loss_parts(
    phi_matrix: np.ndarray,
    labels: np.ndarray,
    params: ModelParams,
    cfg: TrainConfig,
    centroid: np.ndarray,
) -> dict[str, float]:
    if phi_matrix.shape[0] == 0:
        raise ValidationError("empty batch")
    logits = phi_matrix @ params.head_w + params.head_b
    p = np.clip(sigmoid(logits), 1e-12, 1.0 - 1e-12)
    y = np.asarray(labels, dtype=float)
    l_sup = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    normal = y == 0
    if normal.any():
        diff = phi_matrix[normal] - centroid
        l_unsup = float(np.mean(np.sum(diff * diff, axis=1)))
    else:
        l_unsup = 0.0
    reg = regularizer(params)
    total = l_sup + cfg.lambda1 * l_unsup + cfg.lambda2 * reg
    if not math.isfinite(total):
        raise TrainingError(f"non-finite loss (sup={l_sup}, unsup={l_unsup}, reg={reg})")
    return {"loss": total, "loss_sup": l_sup, "loss_unsup": l_unsup, "reg": reg}


def loss(
    phi_matrix: np.ndarray,
    labels: np.ndarray,
    params: ModelParams,
    cfg: TrainConfig,
    centroid: np.ndarray,
) -> float:
    return loss_parts(phi_matrix, labels, params, cfg, centroid)["loss"]


def _data_loss(phi_matrix, labels, params, cfg, centroid) -> float:
    """Loss without the regularizer (whose gradient is analytic)."""
    parts = loss_parts(phi_matrix, labels, params, cfg, centroid)
    return parts["loss_sup"] + cfg.lambda1 * parts["loss_unsup"]


# ---------------------------------------------------------------------------
# Gradient


def gradient(
    graphs: list[TransactionGraph],
    labels: np.ndarray,
    params: ModelParams,
    feature_cfg: FeatureConfig,
    train_cfg: TrainConfig,
    centroid: np.ndarray,
    reference: PersistenceDiagram | None,
    precomputed: tuple[list[GraphSignature], list[PipelineCache | None]] | None = None,
) -> np.ndarray:
    """Full-loss gradient over one batch, laid out like ``params.flatten()``.

    Head and regularizer derivatives are closed-form; circuit parameters
    use central differences with cached per-graph pipeline prefixes so a
    probe recomputes only the layers it disturbs.
    """
    y = np.asarray(labels, dtype=float)
    if precomputed is not None:
        base_sigs, caches = precomputed
    else:
        base_sigs, caches = _batch_signatures(graphs, params, feature_cfg, reference)
    phi_matrix = np.vstack([s.phi for s in base_sigs])

    grad = 2.0 * train_cfg.lambda2 * params.flatten()
    layout = _layout(feature_cfg)
    grad[layout["theta_e"]] -= 2.0 * train_cfg.lambda2 * params.theta_e  # not regularized

    # Analytic head gradient.
    logits = phi_matrix @ params.head_w + params.head_b
    p = np.clip(sigmoid(logits), 1e-12, 1.0 - 1e-12)
    resid = (p - y) / len(graphs)
    grad[layout["head_w"]] += phi_matrix.T @ resid
    grad[layout["head_b"]] += float(resid.sum())

    if feature_cfg.ablation == "classical_embedding":
        _check_finite(grad, params, feature_cfg)
        return grad

    h = train_cfg.fd_step
    sl = block_slices(feature_cfg)
    stepwise = [sl["betti0"], sl["betti1"], sl["euler"]]

    def data_loss_with(patched: dict[int, np.ndarray]) -> float:
        mat = phi_matrix.copy()
        for gi, row in patched.items():
            mat[gi] = row
        return _data_loss(mat, y, params, train_cfg, centroid)

    def probe(flat_index: int, affected: list[int],
              layer: int | None, rebuild_unitary: bool) -> None:
        patched_up: dict[int, np.ndarray] = {}
        patched_dn: dict[int, np.ndarray] = {}
        for gi in affected:
            g = graphs[gi]
            for sign, store in ((+1, patched_up), (-1, patched_dn)):
                trial = _shift(params, flat_index, sign * h, feature_cfg)
                row = _probe_signature(
                    g, trial, feature_cfg, reference, caches[gi], layer, rebuild_unitary
                ).phi.copy()
                # The Betti/Euler curves are integer step functions of the
                # parameters: their a.e. derivative is exactly zero, and a
                # difference quotient across a step is not a derivative of
                # anything. Hold them at the base value; the smooth blocks
                # (embeddings, entropy, Wasserstein) carry the derivative.
                for block in stepwise:
                    row[block] = phi_matrix[gi][block]
                store[gi] = row
        up = data_loss_with(patched_up)
        dn = data_loss_with(patched_dn)
        grad[flat_index] += (up - dn) / (2.0 * h)

    touched = _touched_slots(graphs, feature_cfg)
    all_graphs = list(range(len(graphs)))
    probe(layout["theta_e"], all_graphs, None, False)
    for l in range(feature_cfg.n_layers):
        for flat_index, affected in touched[l]["theta_pair"].items():
            probe(flat_index, affected, l, True)
        for flat_index, affected in touched[l]["phi"].items():
            probe(flat_index, affected, l, True)
        for flat_index, affected in touched[l]["psi"].items():
            probe(flat_index, affected, l, True)
        probe(layout["channel"][l], all_graphs, l, False)

    _check_finite(grad, params, feature_cfg)
    return grad


def _check_finite(grad: np.ndarray, params: ModelParams, cfg: FeatureConfig) -> None:
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise TrainingError(f"non-finite gradient at parameter {params.names(cfg)[bad]}")


def _layout(cfg: FeatureConfig) -> dict:
    npair = len(pair_slots(cfg.capacity))
    ntri = len(triple_slots(cfg.capacity))
    per_layer = npair + cfg.capacity + ntri + 1
    out = {"theta_e": 0, "layers": [], "channel": []}
    pos = 1
    for _ in range(cfg.n_layers):
        out["layers"].append(
            {"theta_pair": pos, "phi": pos + npair, "psi": pos + npair + cfg.capacity}
        )
        out["channel"].append(pos + per_layer - 1)
        pos += per_layer
    nfeat = feature_length(cfg)
    out["head_w"] = slice(pos, pos + nfeat)
    out["head_b"] = pos + nfeat
    return out


def _shift(params: ModelParams, flat_index: int, delta: float, cfg: FeatureConfig) -> ModelParams:
    vec = params.flatten()
    vec[flat_index] += delta
    return ModelParams.from_flat(vec, cfg)


def _touched_slots(graphs: list[TransactionGraph], cfg: FeatureConfig) -> list[dict]:
    """Per layer, map flat parameter index -> batch graphs it influences."""
    layout = _layout(cfg)
    pair_index = {p: s for s, p in enumerate(pair_slots(cfg.capacity))}
    tri_index = {t: s for s, t in enumerate(triple_slots(cfg.capacity))}
    per_graph = []
    for g in graphs:
        order = g.qubit_order()
        idx = {v: i for i, v in enumerate(order)}
        pairs = {
            pair_index[tuple(sorted((idx[u], idx[v])))] for u, v in g.undirected_pairs()
        }
        tris = {
            tri_index[tuple(sorted(idx[x] for x in t[:3]))] for t in g.triangles
        }
        per_graph.append((pairs, set(range(len(order))), tris))

    out = []
    for l in range(cfg.n_layers):
        base = layout["layers"][l]
        slots = {"theta_pair": {}, "phi": {}, "psi": {}}
        for gi, (pairs, nodes, tris) in enumerate(per_graph):
            for s in pairs:
                slots["theta_pair"].setdefault(base["theta_pair"] + s, []).append(gi)
            for s in nodes:
                slots["phi"].setdefault(base["phi"] + s, []).append(gi)
            for s in tris:
                slots["psi"].setdefault(base["psi"] + s, []).append(gi)
        out.append(slots)
    return out


def _batch_signatures(
    graphs: list[TransactionGraph],
    params: ModelParams,
    cfg: FeatureConfig,
    reference: PersistenceDiagram | None,
) -> tuple[list[GraphSignature], list[PipelineCache | None]]:
    sigs: list[GraphSignature] = []
    caches: list[PipelineCache | None] = []
    for g in graphs:
        if cfg.ablation == "classical_embedding":
            sigs.append(classical_signature(g, cfg, reference))
            caches.append(None)
        else:
            rho, cache = run_quantum(g, params.theta_e, graph_layers(g, params, cfg.capacity), cfg)
            sigs.append(signature_from_state(rho, g, cfg, reference))
            caches.append(cache)
    return sigs, caches


def _probe_signature(
    g: TransactionGraph,
    trial: ModelParams,
    cfg: FeatureConfig,
    reference: PersistenceDiagram | None,
    cache: PipelineCache,
    layer: int | None,
    rebuild_unitary: bool,
) -> GraphSignature:
    layers = graph_layers(g, trial, cfg.capacity)
    if layer is None:
        # Encoding angle changed: fresh rho0, cached unitaries everywhere.
        from .quantum.states import EncodingParams, encode_state

        rho0 = encode_state(g, EncodingParams(theta_e=trial.theta_e))
        rho, _ = run_quantum(g, trial.theta_e, layers, cfg, cache=cache, override_rho0=rho0)
    else:
        rho, _ = run_quantum(
            g, trial.theta_e, layers, cfg, cache=cache, start_layer=layer,
            rebuild={layer} if rebuild_unitary else frozenset(),
        )
    return signature_from_state(rho, g, cfg, reference)


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainedModel:
    params: ModelParams
    feature_cfg: FeatureConfig
    train_cfg: TrainConfig
    reference: NormalReference
    tau: float
    pipeline: dict = field(default_factory=dict)  # preprocessing snapshot for scoring

    def signature(self, g: TransactionGraph) -> GraphSignature:
        return graph_signature(
            g,
            self.params.theta_e,
            graph_layers(g, self.params, self.feature_cfg.capacity),
            self.feature_cfg,
            self.reference.pooled,
        )


def resolve_ablation(feature_cfg: FeatureConfig, train_cfg: TrainConfig) -> TrainConfig:
    """Coerce the score/loss weights an ablation mode pins down."""
    if feature_cfg.ablation == "supervised_only":
        return replace(train_cfg, lambda1=0.0)
    if feature_cfg.ablation == "no_topology":
        return replace(train_cfg, alpha=0.0, beta=0.0)
    return train_cfg


def train(
    dataset: list[tuple[TransactionGraph, int]],
    feature_cfg: FeatureConfig,
    train_cfg: TrainConfig,
) -> tuple[TrainedModel, list[dict]]:
    """Stochastic gradient training over the labeled graphs.

    The step size stays at eta0 until the batch loss stalls (relative
    improvement below 1e-4 across five steps) and then decays as
    eta0/sqrt(t+1). Stops at gradient norm eps_conv or after t_max steps.
    The reference diagram and the one-class centroid are frozen at the
    initial parameters during training (a moving target destabilizes the
    compactness term) and rebuilt from the final parameters afterwards.
    """
    graphs = [g for g, _ in dataset]
    labels = np.array([y for _, y in dataset], dtype=int)
    if not ((labels == 0).any() and (labels == 1).any()):
        raise ConfigError("training data must contain at least one normal and one fraud graph")
    train_cfg = resolve_ablation(feature_cfg, train_cfg)

    params = init_params(feature_cfg, train_cfg)
    frozen_ref, frozen_centroid = _reference_inputs(graphs, labels, params, feature_cfg)

    rng = substream(train_cfg.seed, "training")
    log: list[dict] = []
    decaying = False
    loss_history: list[float] = []
    order = np.array([], dtype=int)
    cursor = 0

    for t in range(train_cfg.t_max):
        if cursor + train_cfg.batch_size > order.size:
            order = rng.permutation(len(graphs))
            cursor = 0
        batch_idx = order[cursor:cursor + train_cfg.batch_size]
        cursor += train_cfg.batch_size
        batch = [graphs[i] for i in batch_idx]
        batch_y = labels[batch_idx]

        sigs, caches = _batch_signatures(batch, params, feature_cfg, frozen_ref)
        phi_matrix = np.vstack([s.phi for s in sigs])
        parts = loss_parts(phi_matrix, batch_y, params, train_cfg, frozen_centroid)
        grad = gradient(batch, batch_y, params, feature_cfg, train_cfg,
                        frozen_centroid, frozen_ref, precomputed=(sigs, caches))
        grad_norm = float(np.linalg.norm(grad))

        loss_history.append(parts["loss"])
        if not decaying and len(loss_history) > 5:
            prev = loss_history[-6]
            if (prev - loss_history[-1]) / max(abs(prev), 1e-12) < 1e-4:
                decaying = True
        eta = train_cfg.eta0 / math.sqrt(t + 1) if decaying else train_cfg.eta0

        log.append({
            "step": t, "eta": eta, "grad_norm": grad_norm, **parts,
        })
        params = ModelParams.from_flat(params.flatten() - eta * grad, feature_cfg)
        if grad_norm < train_cfg.eps_conv:
            break

    reference = build_reference(graphs, labels, params, feature_cfg)
    tau = train_cfg.tau if train_cfg.tau is not None else _calibrate_tau(
        reference, train_cfg
    )
    model = TrainedModel(
        params=params,
        feature_cfg=feature_cfg,
        train_cfg=train_cfg,
        reference=reference,
        tau=tau,
    )
    return model, log


def _reference_inputs(
    graphs, labels, params, feature_cfg
) -> tuple[PersistenceDiagram | None, np.ndarray]:
    """Pooled diagram and centroid of the normals at the given parameters."""
    normal_idx = [i for i, y in enumerate(labels) if y == 0]
    sigs, _ = _batch_signatures([graphs[i] for i in normal_idx], params, feature_cfg, None)
    pooled = None
    if feature_cfg.topology_enabled:
        pooled = pool_diagrams([s.diagram for s in sigs if s.diagram is not None])
    vectors = np.vstack([s.phi for s in sigs])
    if pooled is not None:
        w2_slot = block_slices(feature_cfg)["w2"]
        for row, sig in zip(vectors, sigs):
            row[w2_slot] = wasserstein2(sig.diagram, pooled)
    return pooled, vectors.mean(axis=0)


def build_reference(
    graphs, labels, params: ModelParams, feature_cfg: FeatureConfig
) -> NormalReference:
    normal_idx = [i for i, y in enumerate(labels) if y == 0]
    sigs, _ = _batch_signatures([graphs[i] for i in normal_idx], params, feature_cfg, None)
    diagrams = [s.diagram for s in sigs]
    pooled = None
    if feature_cfg.topology_enabled:
        pooled = pool_diagrams([d for d in diagrams if d is not None])
        w2_slot = block_slices(feature_cfg)["w2"]
        for sig in sigs:
            sig.phi[w2_slot] = wasserstein2(sig.diagram, pooled)
    vectors = np.vstack([s.phi for s in sigs])
    return NormalReference(
        vectors=vectors,
        diagrams=diagrams,
        pooled=pooled,
        centroid=vectors.mean(axis=0),
    )


def _calibrate_tau(reference: NormalReference, cfg: TrainConfig) -> float:
    """Quantile of leave-one-out scores over the training normals.

    Large reference sets are subsampled (seeded) for the left-out side;
    each sampled score still ranges over the full reference set.
    """
    n = len(reference)
    if n < 2:
        return 0.0
    if n > 256:
        picker = substream(cfg.seed, "tau-calibration")
        candidates = sorted(picker.choice(n, size=256, replace=False).tolist())
    else:
        candidates = list(range(n))
    scores = []
    for i in candidates:
        diff = reference.vectors - reference.vectors[i]
        base = np.sum(diff * diff, axis=1)
        totals = []
        for j in range(n):
            if j == i:
                continue
            land = 0.0
            if cfg.alpha > 0.0 and reference.diagrams[i] is not None:
                dims = _landscape_dims(reference, i, j)
                land = sum(
                    landscape_l1(reference.landscape_for(i, k), reference.landscape_for(j, k))
                    for k in dims
                )
            totals.append(base[j] + cfg.alpha * land)
        s = min(totals)
        if cfg.beta > 0.0 and reference.pooled is not None and reference.diagrams[i] is not None:
            s += cfg.beta * wasserstein2(reference.diagrams[i], reference.pooled)
        scores.append(s)
    return float(np.quantile(np.asarray(scores), cfg.tau_quantile))


def _landscape_dims(reference: NormalReference, i: int, j: int) -> tuple[int, ...]:
    dims = set()
    for idx in (i, j):
        d = reference.diagrams[idx]
        if d is not None:
            dims.update(d.dims())
    return tuple(sorted(dims))


# ---------------------------------------------------------------------------
# Scoring and decisions


def anomaly_score(
    g: TransactionGraph, model: TrainedModel, signature: GraphSignature | None = None
) -> tuple[float, dict]:
    """Nearest-reference score plus the topological divergence terms.

    s = min over references of (||phi - phi_ref||^2 + alpha * sum_k
    L1(landscape_k, landscape_k_ref)) + beta * W2(diagram, pooled).
    """
    if len(model.reference) == 0:
        raise ValidationError("model has an empty reference set")
    cfg = model.train_cfg
    sig = signature if signature is not None else model.signature(g)
    diff = model.reference.vectors - sig.phi
    base = np.sum(diff * diff, axis=1)
    totals = base.copy()
    if cfg.alpha > 0.0 and sig.diagram is not None:
        dims = tuple(range(model.feature_cfg.max_homology_dim + 1))
        own = {k: sig.landscape_for(k) for k in dims}
        for j in range(len(model.reference)):
            land = sum(
                landscape_l1(own[k], model.reference.landscape_for(j, k)) for k in dims
            )
            totals[j] += cfg.alpha * land
    j_star = int(np.argmin(totals))
    s = float(totals[j_star])
    w2_term = 0.0
    if cfg.beta > 0.0 and sig.diagram is not None and model.reference.pooled is not None:
        w2_term = cfg.beta * wasserstein2(sig.diagram, model.reference.pooled)
        s += w2_term
    return s, {"nearest": j_star, "base": float(base[j_star]),
               "landscape_term": float(totals[j_star] - base[j_star]),
               "w2_term": w2_term}


def decide(score: float, tau: float) -> int:
    """Fraud flag: 1 iff the score strictly exceeds the threshold."""
    return 1 if score > tau else 0


def kernel_similarity(phi: np.ndarray, reference: NormalReference, sigma: float) -> float:
    """Minimum over the reference set of exp(-||phi - phi_ref||^2 / sigma^2)."""
    if len(reference) == 0:
        raise ValidationError("reference set is empty")
    diff = reference.vectors - phi
    worst = float(np.max(np.sum(diff * diff, axis=1)))
    return float(math.exp(-worst / sigma ** 2))


def hypothesis_test(phi: np.ndarray, reference: NormalReference, delta: float,
                    sigma: float = 1.0) -> str:
    """H0 (normal) iff the kernel similarity is at least delta; ties go to H0."""
    return "H0" if kernel_similarity(phi, reference, sigma) >= delta else "H1"


# ---------------------------------------------------------------------------
# Attribution


@dataclass
class FeatureContribution:
    dim: int
    birth: float
    death: float
    mult: int
    persistence: float
    l1_share: float


@dataclass
class AttributionReport:
    score: float
    nearest_reference: int
    landscapes: dict[int, LandscapeFunction]
    gradient_samples: dict[int, list[float]]
    top_features: list[FeatureContribution]
    contributions: list[FeatureContribution]
    l1_residual: float
    l1_total: float

    def summary(self) -> dict:
        return {
            "score": self.score,
            "top_features": [
                {
                    "dim": f.dim, "birth": f.birth, "death": f.death, "mult": f.mult,
                    "persistence": f.persistence, "l1_share": f.l1_share,
                }
                for f in self.top_features
            ],
        }


def attribute(g: TransactionGraph, model: TrainedModel,
              signature: GraphSignature | None = None) -> AttributionReport:
    """Topological attribution: landscapes, their gradients on the epsilon
    grid, the most persistent features, and an exact decomposition of the
    nearest-reference landscape L1 term across features (plus a residual
    where the graph's landscape is zero)."""
    from .topology.landscapes import landscape_gradient

    sig = signature if signature is not None else model.signature(g)
    score, info = anomaly_score(g, model, signature=sig)
    cfg = model.feature_cfg
    dims = tuple(range(cfg.max_homology_dim + 1))
    grid = cfg.eps_grid

    lands, grads = {}, {}
    for k in dims:
        lands[k] = sig.landscape_for(k)
        if sig.diagram is not None:
            grads[k] = [landscape_gradient(sig.diagram, k, x) for x in grid]
        else:
            grads[k] = [0.0 for _ in grid]

    feats = list(sig.diagram.features) if sig.diagram is not None else []
    contributions, residual, total = _decompose_l1(
        sig, model.reference, info["nearest"], dims
    )
    ranked = sorted(
        contributions, key=lambda c: (-(c.persistence * c.mult), c.dim, c.birth)
    )
    return AttributionReport(
        score=score,
        nearest_reference=info["nearest"],
        landscapes=lands,
        gradient_samples=grads,
        top_features=ranked[:3],
        contributions=contributions,
        l1_residual=residual,
        l1_total=total,
    )


def _decompose_l1(
    sig: GraphSignature, reference: NormalReference, j_star: int, dims: tuple[int, ...]
) -> tuple[list[FeatureContribution], float, float]:
    """Split the landscape L1 term by which diagram feature attains the
    envelope; intervals where the graph landscape is zero go to the residual."""
    if sig.diagram is None:
        return [], 0.0, 0.0
    contributions: dict[tuple, FeatureContribution] = {}
    for dim, b, d, m in sig.diagram.features:
        contributions[(dim, b, d)] = FeatureContribution(
            dim=dim, birth=b, death=d, mult=m, persistence=(d - b) * m, l1_share=0.0
        )
    residual = 0.0
    total = 0.0
    for k in dims:
        own = sig.landscape_for(k)
        ref = reference.landscape_for(j_star, k)
        feats = [(b, d, m) for dim, b, d, m in sig.diagram.features if dim == k]
        xs = sorted(set(own.xs) | set(ref.xs))
        for x0, x1 in zip(xs, xs[1:]):
            if x1 <= x0:
                continue
            seg = _segment_l1(own, ref, x0, x1)
            if seg == 0.0:
                continue
            total += seg
            mid = 0.5 * (x0 + x1)
            winner = None
            best = 0.0
            for b, d, m in feats:
                v = m * min(mid - b, d - mid)
                if v > best + 1e-15:
                    best = v
                    winner = (k, b, d)
            if winner is None:
                residual += seg
            else:
                contributions[winner].l1_share += seg
    return list(contributions.values()), residual, total


def _segment_l1(f: LandscapeFunction, g: LandscapeFunction, x0: float, x1: float) -> float:
    h0 = float(f(x0)) - float(g(x0))
    h1 = float(f(x1)) - float(g(x1))
    if h0 * h1 < 0.0:
        xc = x0 + (x1 - x0) * h0 / (h0 - h1)
        return 0.5 * abs(h0) * (xc - x0) + 0.5 * abs(h1) * (x1 - xc)
    return 0.5 * (abs(h0) + abs(h1)) * (x1 - x0)


# ---------------------------------------------------------------------------
# Model persistence (JSON, deterministic)


def model_to_dict(model: TrainedModel) -> dict:
    fc, tc = model.feature_cfg, model.train_cfg
    return {
        "feature_cfg": {
            "capacity": fc.capacity,
            "n_layers": fc.n_layers,
            "eps_grid": list(fc.eps_grid),
            "max_homology_dim": fc.max_homology_dim,
            "rips_eps_max": fc.rips_eps_max,
            "ablation": fc.ablation,
        },
        "train_cfg": {
            "lambda1": tc.lambda1, "lambda2": tc.lambda2, "eta0": tc.eta0,
            "sigma": tc.sigma, "delta": tc.delta, "alpha": tc.alpha, "beta": tc.beta,
            "tau": tc.tau, "tau_quantile": tc.tau_quantile, "t_max": tc.t_max,
            "eps_conv": tc.eps_conv, "batch_size": tc.batch_size,
            "fd_step": tc.fd_step, "theta_e_init": tc.theta_e_init,
            "channel_logit_init": tc.channel_logit_init, "seed": tc.seed,
        },
        "params": {
            "theta_e": model.params.theta_e,
            "layers": [
                {
                    "theta_pair": l.theta_pair.tolist(),
                    "phi": l.phi.tolist(),
                    "psi": l.psi.tolist(),
                    "channel_logit": l.channel_logit,
                }
                for l in model.params.layers
            ],
            "head_w": model.params.head_w.tolist(),
            "head_b": model.params.head_b,
        },
        "reference": {
            "vectors": model.reference.vectors.tolist(),
            "diagrams": [
                None if d is None else diagram_to_lists(d)
                for d in model.reference.diagrams
            ],
            "pooled": (
                None if model.reference.pooled is None
                else diagram_to_lists(model.reference.pooled)
            ),
            "centroid": model.reference.centroid.tolist(),
        },
        "tau": model.tau,
        "pipeline": model.pipeline,
    }


def model_from_dict(doc: dict) -> TrainedModel:
    fc = FeatureConfig(
        capacity=doc["feature_cfg"]["capacity"],
        n_layers=doc["feature_cfg"]["n_layers"],
        eps_grid=tuple(doc["feature_cfg"]["eps_grid"]),
        max_homology_dim=doc["feature_cfg"]["max_homology_dim"],
        rips_eps_max=doc["feature_cfg"]["rips_eps_max"],
        ablation=doc["feature_cfg"]["ablation"],
    )
    tc = TrainConfig(**doc["train_cfg"])
    layers = [
        LayerSlots(
            theta_pair=np.asarray(l["theta_pair"], dtype=float),
            phi=np.asarray(l["phi"], dtype=float),
            psi=np.asarray(l["psi"], dtype=float),
            channel_logit=float(l["channel_logit"]),
        )
        for l in doc["params"]["layers"]
    ]
    params = ModelParams(
        theta_e=float(doc["params"]["theta_e"]),
        layers=layers,
        head_w=np.asarray(doc["params"]["head_w"], dtype=float),
        head_b=float(doc["params"]["head_b"]),
    )
    ref = NormalReference(
        vectors=np.asarray(doc["reference"]["vectors"], dtype=float),
        diagrams=[
            None if d is None else diagram_from_lists(d)
            for d in doc["reference"]["diagrams"]
        ],
        pooled=(
            None if doc["reference"]["pooled"] is None
            else diagram_from_lists(doc["reference"]["pooled"])
        ),
        centroid=np.asarray(doc["reference"]["centroid"], dtype=float),
    )
    return TrainedModel(params=params, feature_cfg=fc, train_cfg=tc,
                        reference=ref, tau=float(doc["tau"]),
                        pipeline=doc.get("pipeline", {}))


def save_model(path, model: TrainedModel) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model), f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_model(path) -> TrainedModel:
    with open(path, "r", encoding="utf-8") as f:
        return model_from_dict(json.load(f))
