"""Feature assembly: one fixed-length vector per graph.

Blocks, in order: flattened quantum embedding (per-node Bloch components
and per-pair ZZ correlators, slot-padded to capacity), correlation
entropy, Betti curves for dimensions 0 and 1 on the epsilon grid, the
Euler-characteristic curve, and the 2-Wasserstein distance to a reference
diagram. Ablation modes swap the quantum blocks for classical node
features or zero out the topological blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import CapacityError, ConfigError, ValidationError
from .graphs import TransactionGraph
from .quantum.conv import (
    ChannelSpec,
    LayerParams,
    apply_channel,
    conjugate,
    layer_generator,
    structure_terms,
    unitary_from_generator,
)
from .quantum.states import DensityMatrix, EncodingParams, encode_state
from .topology.fidelity import DistanceMatrix, WeightMatrix, distance_matrix
from .topology.landscapes import LandscapeFunction, landscape
from .topology.matching import wasserstein2
from .topology.persistence import PersistenceDiagram, persistence
from .topology.rips import vietoris_rips

ABLATIONS = ("full", "classical_embedding", "no_topology", "linear_unitary",
             "supervised_only")


@dataclass(frozen=True)
class FeatureConfig:
    """Shape of the feature vector and the pipeline variant producing it."""

    capacity: int = 8
    n_layers: int = 2
    eps_grid: tuple[float, ...] = tuple(np.linspace(0.0, 1.0, 16).tolist())
    max_homology_dim: int = 1
    rips_eps_max: float = 1.0
    ablation: str = "full"

    def __post_init__(self) -> None:
        if not 1 <= self.capacity <= 12:
            raise ConfigError(f"capacity must be in 1..12, got {self.capacity}")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if list(self.eps_grid) != sorted(self.eps_grid):
            raise ConfigError("eps_grid must be sorted")
        if self.max_homology_dim not in (1, 2):
            raise ConfigError("max_homology_dim must be 1 or 2")
        if self.max_homology_dim == 2 and self.capacity > 16:
            raise ConfigError("max_homology_dim=2 requires capacity <= 16")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")

    @property
    def channel_kind(self) -> str:
        return "identity" if self.ablation == "linear_unitary" else "dephasing_mixture"

    @property
    def topology_enabled(self) -> bool:
        return self.ablation != "no_topology"


def pair_slots(capacity: int) -> list[tuple[int, int]]:
    return list(combinations(range(capacity), 2))


def feature_length(cfg: FeatureConfig) -> int:
    grid = len(cfg.eps_grid)
    return 3 * cfg.capacity + len(pair_slots(cfg.capacity)) + 1 + 2 * grid + grid + 1


def block_slices(cfg: FeatureConfig) -> dict[str, slice]:
    grid = len(cfg.eps_grid)
    npairs = len(pair_slots(cfg.capacity))
    pos = 0
    out = {}
    for name, width in (
        ("bloch", 3 * cfg.capacity),
        ("edge", npairs),
        ("cq", 1),
        ("betti0", grid),
        ("betti1", grid),
        ("euler", grid),
        ("w2", 1),
    ):
        out[name] = slice(pos, pos + width)
        pos += width
    return out


@dataclass
class GraphSignature:
    """Feature vector plus the topological byproducts scoring needs."""

    phi: np.ndarray
    diagram: PersistenceDiagram | None
    landscapes: dict[int, LandscapeFunction] = field(default_factory=dict)

    def landscape_for(self, k: int) -> LandscapeFunction:
        if k not in self.landscapes:
            if self.diagram is None:
                self.landscapes[k] = LandscapeFunction(xs=(), ys=(), dim=k)
            else:
                self.landscapes[k] = landscape(self.diagram, k)
        return self.landscapes[k]


# ---------------------------------------------------------------------------
# Quantum pipeline with reusable intermediates


@dataclass
class PipelineCache:
    """Base-parameter intermediates of one graph, reused by gradient probes."""

    terms: object
    rho0: DensityMatrix
    unitaries: list[np.ndarray]
    states: list[DensityMatrix]  # state after each layer


def run_quantum(
    g: TransactionGraph,
    theta_e: float,
    layers: list[LayerParams],
    cfg: FeatureConfig,
    cache: PipelineCache | None = None,
    start_layer: int = 0,
    rebuild: frozenset[int] | set[int] = frozenset(),
    override_rho0: DensityMatrix | None = None,
) -> tuple[DensityMatrix, PipelineCache]:
    """Evolve the encoded state through all layers.

    Without a cache, everything is built from scratch. With one, the run
    starts from the cached state before ``start_layer`` (or from
    ``override_rho0``) and reuses cached unitaries except for the layer
    indices in ``rebuild``, which are re-exponentiated from ``layers``.
    Channel weights always come from ``layers``.
    """
    if cache is None:
        terms = structure_terms(g)
        rho0 = (
            override_rho0
            if override_rho0 is not None
            else encode_state(g, EncodingParams(theta_e=theta_e))
        )
        rho = rho0
        start = 0
        cached_unitaries = None
    else:
        terms = cache.terms
        cached_unitaries = cache.unitaries
        if override_rho0 is not None:
            rho0 = override_rho0
            rho = rho0
            start = 0
        else:
            rho0 = cache.rho0
            start = start_layer
            rho = rho0 if start == 0 else cache.states[start - 1]

    unitaries: list[np.ndarray] = list(cached_unitaries[:start]) if cached_unitaries else []
    states: list[DensityMatrix] = list(cache.states[:start]) if (cache and start) else []
    for l in range(start, len(layers)):
        if cached_unitaries is not None and l not in rebuild:
            u = cached_unitaries[l]
        else:
            u = unitary_from_generator(layer_generator(terms, layers[l]))
        rho = apply_channel(
            conjugate(rho, u), ChannelSpec.from_logit(layers[l].channel_logit, cfg.channel_kind)
        )
        unitaries.append(u)
        states.append(rho)
    return rho, PipelineCache(terms=terms, rho0=rho0, unitaries=unitaries, states=states)


# ---------------------------------------------------------------------------
# Signature assembly. The hot path shares one set of two-qubit reductions
# across the Bloch readout, the correlation entropy and the distance
# matrix, with closed-form 2x2 eigenvalues instead of LAPACK calls.


@lru_cache(maxsize=4096)
def _pair_reduction_spec(n: int, i: int, j: int) -> str:
    from string import ascii_letters

    row = list(ascii_letters[:n])
    col = list(ascii_letters[n:2 * n])
    for q in range(n):
        if q not in (i, j):
            col[q] = row[q]
    return "".join(row) + "".join(col) + "->" + row[i] + row[j] + col[i] + col[j]


def _all_reductions(mat: np.ndarray, n: int):
    """All unordered two-qubit reductions plus the single-qubit ones."""
    t = mat.reshape((2,) * (2 * n))
    pairs: dict[tuple[int, int], np.ndarray] = {}
    for i, j in combinations(range(n), 2):
        pairs[(i, j)] = np.einsum(_pair_reduction_spec(n, i, j), t).reshape(4, 4)
    singles: list[np.ndarray] = []
    for q in range(n):
        if n == 1:
            singles.append(mat)
            break
        other = (q, q + 1) if q + 1 < n else (q - 1, q)
        red = pairs[tuple(sorted(other))]
        r4 = red.reshape(2, 2, 2, 2)
        # Trace out the partner qubit of the chosen pair.
        singles.append(np.trace(r4, axis1=1, axis2=3) if other[0] == q
                       else np.trace(r4, axis1=0, axis2=2))
    return singles, pairs


def _qubit_entropy(r: np.ndarray) -> float:
    det = float(np.real(r[0, 0] * r[1, 1] - r[0, 1] * r[1, 0]))
    spread = np.sqrt(max(0.0, 1.0 - 4.0 * det))
    total = 0.0
    for lam in ((1.0 + spread) / 2.0, (1.0 - spread) / 2.0):
        if lam > 1e-12:
            total -= lam * np.log(lam)
    return total


def _mat_entropy(mat: np.ndarray) -> float:
    lam = np.linalg.eigvalsh(mat)
    lam = lam[lam > 1e-12]
    return float(-np.sum(lam * np.log(lam)))


def signature_from_state(
    rho_l: DensityMatrix,
    g: TransactionGraph,
    cfg: FeatureConfig,
    reference: PersistenceDiagram | None,
) -> GraphSignature:
    order = rho_l.node_order or g.qubit_order()
    idx = {v: i for i, v in enumerate(order)}
    n = len(order)
    singles, pair_reds = _all_reductions(rho_l.matrix, n)

    phi = np.zeros(feature_length(cfg))
    sl = block_slices(cfg)
    bloch = np.zeros((cfg.capacity, 3))
    for q in range(n):
        r = singles[q]
        bloch[q] = (
            2.0 * float(np.real(r[0, 1])),
            2.0 * float(np.imag(r[1, 0])),
            float(np.real(r[0, 0] - r[1, 1])),
        )
    phi[sl["bloch"]] = bloch.ravel()

    edge_block = np.zeros(len(pair_slots(cfg.capacity)))
    slot_of = {p: s for s, p in enumerate(pair_slots(cfg.capacity))}
    for u, v in g.undirected_pairs():
        qi, qj = sorted((idx[u], idx[v]))
        diag = np.real(np.diag(pair_reds[(qi, qj)]))
        edge_block[slot_of[(qi, qj)]] = float(diag[0] - diag[1] - diag[2] + diag[3])
    phi[sl["edge"]] = edge_block

    single_entropy = [_qubit_entropy(s) for s in singles]
    if pair_reds:
        stacked = np.stack([red for red in pair_reds.values()])
        lam = np.linalg.eigvalsh(stacked)
        pair_entropy = np.where(lam > 1e-12, -lam * np.log(np.where(lam > 1e-12, lam, 1.0)), 0.0).sum(axis=1)
        cq = sum(
            single_entropy[qi] + single_entropy[qj] - float(s_ab)
            for ((qi, qj), s_ab) in zip(pair_reds.keys(), pair_entropy)
        )
    else:
        cq = 0.0
    phi[sl["cq"]] = cq

    diagram = None
    if cfg.topology_enabled:
        if n >= 2:
            states = [DensityMatrix(s, 1) for s in singles]
            dm = distance_matrix(states, WeightMatrix.identity(2))
        else:
            dm = None
        diagram = _diagram_from_distances(dm, cfg)
        _fill_topology_blocks(phi, sl, diagram, cfg, reference)
    return GraphSignature(phi=phi, diagram=diagram)


def _diagram_from_distances(dm: DistanceMatrix | None, cfg: FeatureConfig) -> PersistenceDiagram:
    if dm is None:
        # Single point: one essential component.
        return PersistenceDiagram(((0, 0.0, np.inf, 1),)).truncated(cfg.rips_eps_max)
    complex_ = vietoris_rips(dm, eps_max=cfg.rips_eps_max, max_dim=cfg.max_homology_dim)
    return persistence(complex_).truncated(cfg.rips_eps_max)


def _fill_topology_blocks(phi, sl, diagram, cfg, reference) -> None:
    grid = np.asarray(cfg.eps_grid)
    phi[sl["betti0"]] = [diagram.betti(0, e) for e in grid]
    phi[sl["betti1"]] = [diagram.betti(1, e) for e in grid]
    phi[sl["euler"]] = [
        sum((-1) ** k * diagram.betti(k, e) for k in range(cfg.max_homology_dim + 1))
        for e in grid
    ]
    phi[sl["w2"]] = wasserstein2(diagram, reference) if reference is not None else 0.0


def graph_signature(
    g: TransactionGraph,
    theta_e: float,
    layers: list[LayerParams],
    cfg: FeatureConfig,
    reference: PersistenceDiagram | None = None,
) -> GraphSignature:
    """Full pipeline for one graph: encode, convolve, extract, assemble."""
    if g.n_nodes > cfg.capacity:
        raise CapacityError(
            f"graph has {g.n_nodes} nodes, capacity is {cfg.capacity}; "
            "reduce it with sample_subgraph first"
        )
    if cfg.ablation == "classical_embedding":
        return classical_signature(g, cfg, reference)
    rho_l, _ = run_quantum(g, theta_e, layers, cfg)
    return signature_from_state(rho_l, g, cfg, reference)


def build_feature_vector(
    g: TransactionGraph,
    theta_e: float,
    layers: list[LayerParams],
    cfg: FeatureConfig,
    reference: PersistenceDiagram | None = None,
) -> np.ndarray:
    return graph_signature(g, theta_e, layers, cfg, reference).phi


# ---------------------------------------------------------------------------
# Classical-embedding ablation: degree/strength/clustering node features,
# Euclidean node-feature distances driving the same topology blocks.


def classical_node_features(g: TransactionGraph) -> np.ndarray:
    order = g.qubit_order()
    nbrs: dict[str, set[str]] = {v: set() for v in order}
    for s, d, _, _ in g.edges:
        nbrs[s].add(d)
        nbrs[d].add(s)
    deg = np.array([g.degree(v) for v in order], dtype=float)
    strength = np.array([g.strength(v) for v in order], dtype=float)
    cc = np.zeros(len(order))
    for i, v in enumerate(order):
        k = len(nbrs[v])
        if k >= 2:
            links = sum(
                1 for a, b in combinations(sorted(nbrs[v]), 2) if b in nbrs[a]
            )
            cc[i] = 2.0 * links / (k * (k - 1))
    if deg.max() > 0:
        deg = deg / deg.max()
    if strength.max() > 0:
        strength = strength / strength.max()
    return np.stack([deg, strength, cc], axis=1)


def classical_signature(
    g: TransactionGraph, cfg: FeatureConfig, reference: PersistenceDiagram | None
) -> GraphSignature:
    order = g.qubit_order()
    idx = {v: i for i, v in enumerate(order)}
    feats = classical_node_features(g)

    phi = np.zeros(feature_length(cfg))
    sl = block_slices(cfg)
    bloch = np.zeros((cfg.capacity, 3))
    bloch[: len(order)] = feats
    phi[sl["bloch"]] = bloch.ravel()
    edge_block = np.zeros(len(pair_slots(cfg.capacity)))
    slot_of = {p: s for s, p in enumerate(pair_slots(cfg.capacity))}
    agg: dict[tuple[int, int], float] = {}
    for s, d, w, _ in g.edges:
        key = tuple(sorted((idx[s], idx[d])))
        agg[key] = agg.get(key, 0.0) + w
    peak = max(agg.values(), default=0.0)
    for key, w in agg.items():
        edge_block[slot_of[key]] = w / peak if peak > 0 else 0.0
    phi[sl["edge"]] = edge_block
    # cq stays zero: no quantum correlations in this mode.

    diagram = None
    if cfg.topology_enabled:
        if len(order) >= 2:
            diff = feats[:, None, :] - feats[None, :, :]
            d = np.sqrt((diff ** 2).sum(-1))
            if d.max() > 0:
                d = d / d.max()
            np.fill_diagonal(d, 0.0)
            dm = DistanceMatrix(0.5 * (d + d.T))
        else:
            dm = None
        diagram = _diagram_from_distances(dm, cfg)
        _fill_topology_blocks(phi, sl, diagram, cfg, reference)
    return GraphSignature(phi=phi, diagram=diagram)


# ---------------------------------------------------------------------------
# sklearn-compatible transformer


class GraphFeaturizer(BaseEstimator, TransformerMixin):
    """Transform graphs into feature matrices with fixed model parameters.

    Stateless by default; ``fit`` records the pooled diagram of the
    training graphs labeled normal so ``transform`` can fill the
    Wasserstein slot. Intended for composing the pipeline with the wider
    scikit-learn ecosystem; the trainable path lives in FraudDetector.
    """

    def __init__(self, theta_e: float = 0.0, capacity: int = 8, n_layers: int = 2,
                 ablation: str = "full", grid_size: int = 16):
        self.theta_e = theta_e
        self.capacity = capacity
        self.n_layers = n_layers
        self.ablation = ablation
        self.grid_size = grid_size

    def _cfg(self) -> FeatureConfig:
        return FeatureConfig(
            capacity=self.capacity,
            n_layers=self.n_layers,
            eps_grid=tuple(np.linspace(0.0, 1.0, self.grid_size).tolist()),
            ablation=self.ablation,
        )

    def _layers(self, g: TransactionGraph) -> list[LayerParams]:
        return [
            LayerParams(
                theta={p: 0.0 for p in g.undirected_pairs()},
                phi={v: 0.0 for v in g.nodes},
                psi={tuple(sorted(t[:3])): 0.0 for t in g.triangles},
                channel_logit=0.0,
            )
            for _ in range(self.n_layers)
        ]

    def fit(self, X, y=None):
        cfg = self._cfg()
        pooled: list = []
        if y is not None:
            for g, label in zip(X, y):
                if label == 0:
                    sig = graph_signature(g, self.theta_e, self._layers(g), cfg)
                    if sig.diagram is not None:
                        pooled.extend(sig.diagram.features)
        self.reference_ = PersistenceDiagram(tuple(sorted(pooled))) if pooled else None
        return self

    def transform(self, X):
        cfg = self._cfg()
        ref = getattr(self, "reference_", None)
        return np.vstack(
            [build_feature_vector(g, self.theta_e, self._layers(g), cfg, ref) for g in X]
        )
