"""Variational graph convolution layers with a non-linear channel.

Each layer conjugates the state by exp(-i G) where the Hermitian generator
G carries one trainable angle per edge pair (Heisenberg XX+YY+ZZ term),
per node (Z term) and per triangle (ZZZ term), then applies a learnable
convex mixture of the identity and full computational-basis dephasing.
The mixture is exactly trace preserving and completely positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import ValidationError
from ..graphs import TransactionGraph
from .states import (
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    DensityMatrix,
    _check_capacity,
    _z_diag,
    partial_trace,
    pauli_on,
    von_neumann_entropy,
)

Pair = tuple[str, str]
Triple = tuple[str, str, str]


@dataclass
class LayerParams:
    """Trainable angles keyed by the graph's pairs, nodes and triangles."""

    theta: dict[Pair, float]
    phi: dict[str, float]
    psi: dict[Triple, float] = field(default_factory=dict)
    channel_logit: float = 0.0

    def check_finite(self) -> None:
        for name, mapping in (("theta", self.theta), ("phi", self.phi), ("psi", self.psi)):
            for key, val in mapping.items():
                if not math.isfinite(val):
                    raise ValidationError(f"non-finite {name}[{key}] = {val}")
        if not math.isfinite(self.channel_logit):
            raise ValidationError(f"non-finite channel_logit = {self.channel_logit}")


@dataclass(frozen=True)
class ChannelSpec:
    """Convex mixture of identity and full dephasing with weight ``p``."""

    kind: str = "dephasing_mixture"
    p: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("dephasing_mixture", "identity"):
            raise ValidationError(f"unknown channel kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"channel weight p={self.p} outside [0,1]")

    @classmethod
    def from_logit(cls, logit: float, kind: str = "dephasing_mixture") -> "ChannelSpec":
        if kind == "identity":
            return cls(kind="identity", p=0.0)
        return cls(kind=kind, p=1.0 / (1.0 + math.exp(-logit)))

    def kraus_operators(self, dim: int) -> list[np.ndarray]:
        """Kraus decomposition; satisfies sum K'K = I exactly."""
        if self.kind == "identity" or self.p == 0.0:
            return [np.eye(dim, dtype=complex)]
        ops = [math.sqrt(1.0 - self.p) * np.eye(dim, dtype=complex)]
        for k in range(dim):
            proj = np.zeros((dim, dim), dtype=complex)
            proj[k, k] = math.sqrt(self.p)
            ops.append(proj)
        return ops


@dataclass(frozen=True)
class QuantumEmbedding:
    """Readout of the evolved state: per-node Bloch vectors and edge ZZ correlators."""

    bloch: dict[str, tuple[float, float, float]]
    edge_zz: dict[Pair, float]


# ---------------------------------------------------------------------------
# Generator assembly (cached per graph by callers that iterate)


@dataclass(frozen=True)
class GraphTerms:
    """Pre-assembled Pauli terms of a graph: reused across layers and probes."""

    n: int
    order: tuple[str, ...]
    pair_mats: dict[Pair, np.ndarray]
    z_diags: dict[str, np.ndarray]
    tri_diags: dict[Triple, np.ndarray]


def structure_terms(g: TransactionGraph) -> GraphTerms:
    cached = getattr(g, "_structure_terms", None)
    if cached is not None:
        return cached
    n = g.n_nodes
    _check_capacity(n)
    order = g.qubit_order()
    idx = {v: i for i, v in enumerate(order)}
    pair_mats: dict[Pair, np.ndarray] = {}
    for u, v in g.undirected_pairs():
        i, j = idx[u], idx[v]
        pair_mats[(u, v)] = (
            pauli_on(n, {i: PAULI_X, j: PAULI_X})
            + pauli_on(n, {i: PAULI_Y, j: PAULI_Y})
            + pauli_on(n, {i: PAULI_Z, j: PAULI_Z})
        )
    z_diags = {v: _z_diag(n, (idx[v],)) for v in order}
    tri_diags: dict[Triple, np.ndarray] = {}
    for a, b, c, _ in g.triangles:
        key = tuple(sorted((a, b, c)))
        tri_diags[key] = _z_diag(n, (idx[a], idx[b], idx[c]))
    terms = GraphTerms(n=n, order=order, pair_mats=pair_mats,
                       z_diags=z_diags, tri_diags=tri_diags)
    g._structure_terms = terms  # memoized: terms depend only on the topology
    return terms


def layer_generator(terms: GraphTerms, p: LayerParams) -> np.ndarray:
    """Hermitian generator of one layer from its angles."""
    p.check_finite()
    if set(p.theta) != set(terms.pair_mats):
        raise ValidationError("theta keys must be exactly the graph's edge pairs")
    if set(p.phi) != set(terms.order):
        raise ValidationError("phi keys must be exactly the graph's nodes")
    if set(p.psi) != set(terms.tri_diags):
        raise ValidationError("psi keys must be exactly the graph's triangles")
    dim = 2 ** terms.n
    gen = np.zeros((dim, dim), dtype=complex)
    for key, angle in sorted(p.theta.items()):
        if angle != 0.0:
            gen += angle * terms.pair_mats[key]
    diag = np.zeros(dim)
    for node, angle in sorted(p.phi.items()):
        if angle != 0.0:
            diag += angle * terms.z_diags[node]
    for key, angle in sorted(p.psi.items()):
        if angle != 0.0:
            diag += angle * terms.tri_diags[key]
    gen[np.diag_indices(dim)] += diag
    return gen


def unitary_from_generator(gen: np.ndarray) -> np.ndarray:
    """U = exp(-i * gen) via Hermitian eigendecomposition (exact, no Trotter)."""
    gen = 0.5 * (gen + gen.conj().T)
    lam, vec = np.linalg.eigh(gen)
    return (vec * np.exp(-1j * lam)) @ vec.conj().T


def build_layer_unitary(g: TransactionGraph, p: LayerParams) -> np.ndarray:
    """Unitary of one convolution layer on the graph's qubit register."""
    return unitary_from_generator(layer_generator(structure_terms(g), p))


# ---------------------------------------------------------------------------
# Channel and forward pass


def apply_channel(rho: DensityMatrix, c: ChannelSpec) -> DensityMatrix:
    """N(rho) = (1-p) rho + p diag(rho); trace preserved exactly."""
    if c.kind == "identity" or c.p == 0.0:
        return rho
    out = (1.0 - c.p) * rho.matrix + c.p * np.diag(np.diag(rho.matrix))
    return DensityMatrix(out, rho.m_qubits, node_order=rho.node_order)


def conjugate(rho: DensityMatrix, unitary: np.ndarray) -> DensityMatrix:
    out = unitary @ rho.matrix @ unitary.conj().T
    out = 0.5 * (out + out.conj().T)
    return DensityMatrix(out, rho.m_qubits, node_order=rho.node_order)


def forward(
    rho0: DensityMatrix,
    layers: Sequence[LayerParams],
    g: TransactionGraph,
    channel_kind: str = "dephasing_mixture",
) -> tuple[DensityMatrix, QuantumEmbedding]:
    """Evolve through all layers and read out the embedding.

    Per layer: rho <- N(U rho U') with N the layer's dephasing mixture.
    """
    if len(layers) < 1:
        raise ValidationError("forward needs at least one layer")
    terms = structure_terms(g)
    rho = rho0
    for lp in layers:
        u = unitary_from_generator(layer_generator(terms, lp))
        rho = apply_channel(conjugate(rho, u), ChannelSpec.from_logit(lp.channel_logit, channel_kind))
    return rho, read_embedding(rho, g)


def read_embedding(rho: DensityMatrix, g: TransactionGraph) -> QuantumEmbedding:
    order = rho.node_order or g.qubit_order()
    idx = {v: i for i, v in enumerate(order)}
    bloch: dict[str, tuple[float, float, float]] = {}
    for v in order:
        r1 = partial_trace(rho, (idx[v],))
        bloch[v] = (
            r1.expectation(PAULI_X),
            r1.expectation(PAULI_Y),
            r1.expectation(PAULI_Z),
        )
    zz = np.kron(PAULI_Z, PAULI_Z)
    edge_zz: dict[Pair, float] = {}
    for u, v in g.undirected_pairs():
        r2 = partial_trace(rho, (idx[u], idx[v]))
        edge_zz[(u, v)] = r2.expectation(zz)
    return QuantumEmbedding(bloch=bloch, edge_zz=edge_zz)


def correlation_entropy(
    rho: DensityMatrix,
    pairs: Sequence[tuple[str, str]] | Sequence[tuple[int, int]],
) -> float:
    """Sum of quantum mutual informations S(i) + S(j) - S(ij) over the pairs."""
    total = 0.0
    for a, b in pairs:
        if isinstance(a, str):
            if rho.node_order is None:
                raise ValidationError("state carries no node order; pass qubit indices")
            ia, ib = rho.node_order.index(a), rho.node_order.index(b)
        else:
            ia, ib = int(a), int(b)
        if ia == ib or min(ia, ib) < 0 or max(ia, ib) >= rho.m_qubits:
            raise ValidationError(f"invalid qubit pair ({a},{b})")
        s_a = von_neumann_entropy(partial_trace(rho, (ia,)))
        s_b = von_neumann_entropy(partial_trace(rho, (ib,)))
        s_ab = von_neumann_entropy(partial_trace(rho, (ia, ib)))
        total += s_a + s_b - s_ab
    return total
