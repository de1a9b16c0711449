"""Transaction graphs: parsing, preprocessing, sampling and synthesis.

A :class:`TransactionGraph` is a weighted directed multigraph of accounts
with optional hyperedge triangles (three-party interactions) and labels.
Preprocessing aggregates transactions over time windows, normalizes
weights, assigns degree-based node centralities and filters weak edges.
The synthetic generator produces many small labeled graphs with injected
fraud motifs (directed cycles, high-fan-out stars, weighted triangles).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Sequence

import numpy as np

from ._rng import substream
from .errors import ConfigError, ParseError, ValidationError

Edge = tuple[str, str, float, int]  # (src, dst, weight, timestamp)
Triangle = tuple[str, str, str, float]  # (i, j, k, gamma)


@dataclass
class TransactionGraph:
    """Directed multigraph of accounts and transactions.

    ``node_bias`` holds per-account centralities in [0, 1]; after
    :func:`preprocess` they sum to one. ``labels`` optionally maps node
    ids (str) or edge indices (int) to 0 (normal) / 1 (fraud).
    """

    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    triangles: tuple[Triangle, ...] = ()
    node_bias: dict[str, float] = field(default_factory=dict)
    labels: dict[object, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.nodes = tuple(self.nodes)
        self.edges = tuple(tuple(e) for e in self.edges)
        self.triangles = tuple(tuple(t) for t in self.triangles)
        node_set = set(self.nodes)
        for src, dst, w, _ in self.edges:
            if src not in node_set or dst not in node_set:
                raise ValidationError(f"edge ({src},{dst}) references unknown node")
            if src == dst:
                raise ValidationError(f"self-loop on node {src!r} is not supported")
            if not math.isfinite(w) or w < 0:
                raise ValidationError(f"edge ({src},{dst}) has invalid weight {w}")
        for a, b, c, _ in self.triangles:
            if {a, b, c} - node_set:
                raise ValidationError(f"triangle ({a},{b},{c}) references unknown node")
            if len({a, b, c}) != 3:
                raise ValidationError(f"triangle ({a},{b},{c}) has repeated vertices")
        for v, bias in self.node_bias.items():
            if v not in node_set:
                raise ValidationError(f"node_bias references unknown node {v!r}")
            if not 0.0 <= bias <= 1.0:
                raise ValidationError(f"node_bias[{v!r}]={bias} outside [0,1]")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def qubit_order(self) -> tuple[str, ...]:
        """Node-to-qubit assignment: sorted account-id order."""
        return tuple(sorted(self.nodes))

    def bias_of(self, node: str) -> float:
        return self.node_bias.get(node, 0.0)

    def degree(self, node: str) -> int:
        return sum(1 for s, d, _, _ in self.edges if node in (s, d))

    def strength(self, node: str) -> float:
        return sum(w for s, d, w, _ in self.edges if node in (s, d))

    def undirected_pairs(self) -> list[tuple[str, str]]:
        """Unique unordered endpoint pairs that carry at least one edge."""
        pairs = {tuple(sorted((s, d))) for s, d, _, _ in self.edges}
        return sorted(pairs)


@dataclass(frozen=True)
class PreprocessConfig:
    """Stage-0 preprocessing knobs.

    ``window`` is the aggregation span in integer time ticks (half-open
    windows [t, t + window)); ``filter_threshold`` removes edges whose
    normalized weight does not exceed it.
    """

    window: int = 1
    filter_threshold: float = 0.0
    min_max_normalize: bool = True

    def __post_init__(self) -> None:
        if self.window <= 0:
            raise ConfigError(f"window must be positive, got {self.window}")
        if not 0.0 <= self.filter_threshold < 1.0:
            raise ConfigError(
                f"filter_threshold must be in [0,1), got {self.filter_threshold}"
            )


@dataclass(frozen=True)
class SyntheticConfig:
    """Synthetic dataset shape: many small graphs with rare fraud motifs.

    Per-graph neighborhood sizes are drawn between ``n_accounts_min``
    (default: 5 or the budget, whichever is smaller) and ``n_accounts``.
    """

    n_graphs: int = 1000
    n_accounts: int = 8
    n_transactions: int = 14
    fraud_ratio: float = 0.01
    fraud_motifs: tuple[str, ...] = ("cycle", "star", "triangle")
    seed: int = 0
    n_accounts_min: int | None = None

    _MOTIFS = ("cycle", "star", "triangle")

    def __post_init__(self) -> None:
        if self.n_accounts < 4:
            raise ConfigError(f"n_accounts must be >= 4, got {self.n_accounts}")
        if self.n_graphs < 1:
            raise ConfigError("n_graphs must be positive")
        if not 0.0 < self.fraud_ratio < 1.0:
            raise ConfigError(f"fraud_ratio must be in (0,1), got {self.fraud_ratio}")
        bad = set(self.fraud_motifs) - set(self._MOTIFS)
        if bad:
            raise ConfigError(f"unknown fraud motifs: {sorted(bad)}")
        if "star" in self.fraud_motifs and self.n_accounts < 6:
            raise ConfigError("star motif needs n_accounts >= 6 (fan-out >= 5)")
        if self.n_accounts_min is not None and not 4 <= self.n_accounts_min <= self.n_accounts:
            raise ConfigError("n_accounts_min must be in [4, n_accounts]")

    @property
    def size_floor(self) -> int:
        return self.n_accounts_min if self.n_accounts_min is not None else min(5, self.n_accounts)


# ---------------------------------------------------------------------------
# Parsing


def parse_edge_list(text: str | IO[str]) -> TransactionGraph:
    """Parse a CSV edge list with header ``src,dst,amount,timestamp[,label]``.

    Repeated (src, dst) rows are kept as parallel edges; aggregation is
    deferred to :func:`preprocess`. Labels, when present, attach to edge
    indices.
    """
    raw = text.read() if hasattr(text, "read") else text
    lines = raw.splitlines()
    if not lines:
        raise ParseError("line 1: missing header")
    header = [h.strip() for h in lines[0].split(",")]
    if header not in (["src", "dst", "amount", "timestamp"],
                      ["src", "dst", "amount", "timestamp", "label"]):
        raise ParseError(f"line 1: unexpected header {lines[0]!r}")
    has_label = len(header) == 5

    edges: list[Edge] = []
    labels: dict[object, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = [c.strip() for c in line.split(",")]
        if len(cols) != len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} columns, got {len(cols)}")
        src, dst = cols[0], cols[1]
        if not src or not dst:
            raise ParseError(f"line {lineno}: empty account id")
        try:
            amount = float(cols[2])
        except ValueError:
            raise ParseError(f"line {lineno}: bad amount {cols[2]!r}") from None
        if amount < 0:
            raise ValidationError(f"line {lineno}: negative amount {amount}")
        try:
            timestamp = int(cols[3])
        except ValueError:
            raise ParseError(f"line {lineno}: bad timestamp {cols[3]!r}") from None
        if has_label:
            lab = cols[4].lower()
            if lab in ("0", "normal"):
                labels[len(edges)] = 0
            elif lab in ("1", "fraud"):
                labels[len(edges)] = 1
            elif lab:
                raise ParseError(f"line {lineno}: bad label {cols[4]!r}")
        edges.append((src, dst, amount, timestamp))

    nodes = tuple(sorted({e[0] for e in edges} | {e[1] for e in edges}))
    bias = {v: 1.0 / len(nodes) for v in nodes} if nodes else {}
    return TransactionGraph(nodes=nodes, edges=tuple(edges), node_bias=bias, labels=labels)


# ---------------------------------------------------------------------------
# Preprocessing


def preprocess(g: TransactionGraph, cfg: PreprocessConfig) -> TransactionGraph:
    """Aggregate, normalize, weight and filter a raw graph.

    Steps, in order: sum parallel edges within each half-open time window;
    scale weights into [0, 1] by dividing by the maximum (all-equal weights
    map to 1.0 so filtering never empties the graph); merge duplicate
    triangle hyperedges; drop edges with weight <= filter_threshold; set
    node centralities to normalized post-filter degrees.

    The operation is idempotent for a fixed config.
    """
    if not g.nodes:
        raise ValidationError("cannot preprocess an empty graph")

    # Aggregate per (src, dst, window); representative timestamp is the
    # window start so re-windowing is stable.
    buckets: dict[tuple[str, str, int], float] = {}
    for src, dst, w, t in g.edges:
        win = t // cfg.window
        buckets[(src, dst, win)] = buckets.get((src, dst, win), 0.0) + w
    items = sorted(buckets.items())
    weights = [w for _, w in items]

    if cfg.min_max_normalize and weights:
        wmax = max(weights)
        if wmax <= 0.0:
            weights = [1.0 for _ in weights]  # degenerate range: keep everything
        else:
            weights = [w / wmax for w in weights]

    edges = tuple(
        (src, dst, w, win * cfg.window)
        for ((src, dst, win), _), w in zip(items, weights)
    )
    edges = tuple(e for e in edges if e[2] > cfg.filter_threshold)

    tri_buckets: dict[tuple[str, str, str], float] = {}
    for a, b, c, gamma in g.triangles:
        key = tuple(sorted((a, b, c)))
        tri_buckets[key] = tri_buckets.get(key, 0.0) + gamma
    triangles = tuple((a, b, c, gm) for (a, b, c), gm in sorted(tri_buckets.items()))

    deg: dict[str, int] = {v: 0 for v in g.nodes}
    for src, dst, _, _ in edges:
        deg[src] += 1
        deg[dst] += 1
    total = sum(deg.values())
    if total == 0:
        bias = {v: 1.0 / len(g.nodes) for v in g.nodes}
    else:
        bias = {v: deg[v] / total for v in g.nodes}

    return TransactionGraph(
        nodes=tuple(sorted(g.nodes)),
        edges=edges,
        triangles=triangles,
        node_bias=bias,
        labels={k: v for k, v in g.labels.items() if isinstance(k, str)},
    )


# ---------------------------------------------------------------------------
# Subgraph sampling


def sample_subgraph(g: TransactionGraph, kappa: float, seed: int) -> TransactionGraph:
    """Extract a representative subgraph with at most ceil(kappa * |E|) edges.

    Edges are collected by seeded random walks (undirected traversal)
    restarted from the highest-centrality node; if the walk cannot reach
    enough edges (disconnected graphs) the budget is filled with the
    heaviest unused edges. Triangles survive only if each of their vertex
    pairs is still backed by a sampled edge. Deterministic per seed.
    """
    if not 0.0 < kappa <= 1.0:
        raise ValidationError(f"kappa must be in (0,1], got {kappa}")
    m = g.n_edges
    if m == 0:
        raise ValidationError("cannot sample a graph with no edges")
    if kappa * m < 1.0:
        # Degenerate budget: single highest-weight edge and its endpoints.
        best = max(range(m), key=lambda i: (g.edges[i][2], g.edges[i][:2]))
        return _induced(g, [best])
    budget = math.ceil(kappa * m)
    if budget >= m:
        return g

    rng = substream(seed, "sampling")
    order = {v: i for i, v in enumerate(sorted(g.nodes))}
    start = max(g.nodes, key=lambda v: (g.bias_of(v), -order[v]))
    incident: dict[str, list[int]] = {v: [] for v in g.nodes}
    for i, (src, dst, _, _) in enumerate(g.edges):
        incident[src].append(i)
        incident[dst].append(i)

    selected: dict[int, None] = {}
    current = start
    steps = 0
    max_steps = 50 * m + 100
    while len(selected) < budget and steps < max_steps:
        steps += 1
        nbrs = incident[current]
        if not nbrs or rng.random() < 0.15:
            current = start
            continue
        ei = nbrs[int(rng.integers(len(nbrs)))]
        selected[ei] = None
        src, dst, _, _ = g.edges[ei]
        current = dst if current == src else src

    if len(selected) < budget:
        # Unreached components: fill deterministically by weight.
        rest = sorted(
            (i for i in range(m) if i not in selected),
            key=lambda i: (-g.edges[i][2], g.edges[i][:2]),
        )
        for i in rest[: budget - len(selected)]:
            selected[i] = None

    return _induced(g, sorted(selected))


def _induced(g: TransactionGraph, edge_indices: Sequence[int]) -> TransactionGraph:
    edges = tuple(g.edges[i] for i in edge_indices)
    nodes = tuple(sorted({e[0] for e in edges} | {e[1] for e in edges}))
    covered = {tuple(sorted((s, d))) for s, d, _, _ in edges}
    triangles = tuple(
        t for t in g.triangles
        if all(tuple(sorted(p)) in covered for p in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2])))
    )
    labels: dict[object, int] = {
        k: v for k, v in g.labels.items() if isinstance(k, str) and k in nodes
    }
    for new_i, old_i in enumerate(edge_indices):
        if old_i in g.labels:
            labels[new_i] = g.labels[old_i]
    bias = {v: g.bias_of(v) for v in nodes}
    return TransactionGraph(nodes=nodes, edges=edges, triangles=triangles,
                            node_bias=bias, labels=labels)


# ---------------------------------------------------------------------------
# Synthetic generation


def generate_synthetic(cfg: SyntheticConfig) -> list[tuple[TransactionGraph, int]]:
    """Generate ``cfg.n_graphs`` labeled graphs, deterministic per seed.

    Background transactions follow a preferential-attachment process with
    log-normal amounts; the configured fraction of graphs receives one
    injected fraud motif. The fraud count is exact
    (round(n_graphs * fraud_ratio)) when any motif is enabled.
    """
    n_fraud = int(round(cfg.n_graphs * cfg.fraud_ratio)) if cfg.fraud_motifs else 0
    picker = substream(cfg.seed, "dataset", "labels")
    fraud_idx = set(
        picker.choice(cfg.n_graphs, size=min(n_fraud, cfg.n_graphs), replace=False).tolist()
    )

    out: list[tuple[TransactionGraph, int]] = []
    for gi in range(cfg.n_graphs):
        rng = substream(cfg.seed, "dataset", gi)
        label = 1 if gi in fraud_idx else 0
        out.append((_one_graph(cfg, rng, fraud=bool(label)), label))
    return out


def _one_graph(cfg: SyntheticConfig, rng: np.random.Generator, fraud: bool) -> TransactionGraph:
    # Neighborhood sizes vary graph to graph, bounded by the account budget.
    n_here = int(rng.integers(cfg.size_floor, cfg.n_accounts + 1))
    names = [f"acct{k:03d}" for k in range(n_here)]
    horizon = 32
    deg = np.ones(n_here)
    edges: list[Edge] = []
    triangles: list[Triangle] = []

    # Per-graph volume varies; fraud motifs replace background transactions
    # (laundering rides the existing volume), so edge counts do not give
    # labels away.
    n_tx = max(6, int(round(cfg.n_transactions * n_here / cfg.n_accounts))
               + int(rng.integers(-1, 3)))
    motif = None
    motif_budget = 0
    if fraud:
        motif = _feasible_motif(cfg, n_here, rng)
        motif_budget = _motif_size(motif, n_here, rng)
    for _ in range(max(3, n_tx - motif_budget)):
        p = deg / deg.sum()
        src = int(rng.choice(n_here, p=p))
        q = deg.copy()
        q[src] = 0.0
        dst = int(rng.choice(n_here, p=q / q.sum()))
        amount = float(rng.lognormal(mean=math.log(80.0), sigma=0.25))
        t = int(rng.integers(horizon))
        edges.append((names[src], names[dst], round(amount, 2), t))
        deg[src] += 1
        deg[dst] += 1

    # Occasional benign three-party interaction so normal graphs are not
    # topologically sterile.
    if rng.random() < 0.05 and n_here >= 3:
        a, b, c = (int(i) for i in rng.choice(n_here, size=3, replace=False))
        t0 = int(rng.integers(horizon - 3))
        amt = float(rng.lognormal(mean=math.log(50.0), sigma=0.4))
        for u, v in ((a, b), (b, c), (c, a)):
            edges.append((names[u], names[v], round(amt, 2), t0))
        triangles.append((names[a], names[b], names[c], round(float(rng.uniform(0.05, 0.3)), 4)))

    if fraud:
        _inject_motif(motif, motif_budget, n_here, rng, names, edges, triangles, horizon)

    # Accounts are indexed by activity rank (strength, then degree), so the
    # sorted-id qubit assignment lines nodes up structurally across graphs.
    strength: dict[str, float] = {v: 0.0 for v in names}
    degree: dict[str, int] = {v: 0 for v in names}
    for s, d, w, _ in edges:
        strength[s] += w
        strength[d] += w
        degree[s] += 1
        degree[d] += 1
    ranked = sorted(names, key=lambda v: (-strength[v], -degree[v], v))
    rename = {old: f"acct{rank:03d}" for rank, old in enumerate(ranked)}
    edges = [(rename[s], rename[d], w, t) for s, d, w, t in edges]
    triangles = [(rename[a], rename[b], rename[c], gm) for a, b, c, gm in triangles]

    nodes = tuple(sorted(rename.values()))
    bias = {v: 1.0 / len(nodes) for v in nodes}
    return TransactionGraph(nodes=nodes, edges=tuple(edges),
                            triangles=tuple(triangles), node_bias=bias)


def _feasible_motif(cfg: SyntheticConfig, n_here: int, rng: np.random.Generator) -> str:
    """Pick a motif that fits the graph size (stars need six accounts)."""
    options = [m for m in cfg.fraud_motifs if m != "star" or n_here >= 6]
    if not options:
        options = [m for m in cfg.fraud_motifs if m != "star"] or ["cycle"]
    return options[int(rng.integers(len(options)))]


def _motif_size(motif: str, n_here: int, rng: np.random.Generator) -> int:
    """Number of motif edges; drawn up front so they displace background."""
    if motif == "cycle":
        lo = 4 if n_here >= 5 else 3
        return int(rng.integers(lo, min(6, n_here) + 1))
    if motif == "star":
        return int(rng.integers(5, min(6, n_here - 1) + 1))
    return 3  # triangle


def _inject_motif(
    motif: str,
    size: int,
    n_here: int,
    rng: np.random.Generator,
    names: list[str],
    edges: list[Edge],
    triangles: list[Triangle],
    horizon: int,
) -> None:
    t0 = int(rng.integers(max(1, horizon - 8)))
    amt = float(rng.lognormal(mean=math.log(1500.0), sigma=0.05))
    if motif == "cycle":
        ring = [int(i) for i in rng.choice(n_here, size=size, replace=False)]
        for step in range(size):
            u, v = ring[step], ring[(step + 1) % size]
            # Laundering loop: amounts shrink slightly along the cycle.
            edges.append((names[u], names[v], round(amt * (0.995 ** step), 2), t0 + step))
    elif motif == "star":
        chosen = [int(i) for i in rng.choice(n_here, size=size + 1, replace=False)]
        hub, spokes = chosen[0], chosen[1:]
        for s in spokes:
            edges.append((names[hub], names[s], round(amt * float(rng.uniform(0.97, 1.0)), 2), t0))
    elif motif == "triangle":
        a, b, c = (int(i) for i in rng.choice(n_here, size=3, replace=False))
        for step, (u, v) in enumerate(((a, b), (b, c), (c, a))):
            edges.append((names[u], names[v], round(amt * (0.99 ** step), 2), t0 + step))
        triangles.append((names[a], names[b], names[c], round(float(rng.uniform(0.6, 1.2)), 4)))
    else:  # pragma: no cover - guarded by SyntheticConfig
        raise ConfigError(f"unknown motif {motif!r}")


# ---------------------------------------------------------------------------
# Motif scanning (used by invariants and diagnostics)


def contains_directed_cycle(g: TransactionGraph) -> bool:
    adj: dict[str, set[str]] = {v: set() for v in g.nodes}
    for s, d, _, _ in g.edges:
        adj[s].add(d)
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {v: WHITE for v in g.nodes}

    def visit(u: str) -> bool:
        color[u] = GRAY
        for w in adj[u]:
            if color[w] == GRAY:
                return True
            if color[w] == WHITE and visit(w):
                return True
        color[u] = BLACK
        return False

    return any(color[v] == WHITE and visit(v) for v in g.nodes)


def max_fan_out(g: TransactionGraph) -> int:
    out: dict[str, set[str]] = {v: set() for v in g.nodes}
    for s, d, _, _ in g.edges:
        out[s].add(d)
    return max((len(v) for v in out.values()), default=0)


# ---------------------------------------------------------------------------
# Dataset serialization (JSON lines, one graph per line)


def graph_to_record(g: TransactionGraph, label: int, seed: int) -> dict:
    return {
        "nodes": list(g.nodes),
        "edges": [[s, d, w, t] for s, d, w, t in g.edges],
        "triangles": [[a, b, c, gm] for a, b, c, gm in g.triangles],
        "label": int(label),
        "seed": int(seed),
    }


def record_to_graph(rec: dict) -> tuple[TransactionGraph, int]:
    nodes = tuple(rec["nodes"])
    bias = {v: 1.0 / len(nodes) for v in nodes} if nodes else {}
    g = TransactionGraph(
        nodes=nodes,
        edges=tuple((s, d, float(w), int(t)) for s, d, w, t in rec["edges"]),
        triangles=tuple((a, b, c, float(gm)) for a, b, c, gm in rec.get("triangles", [])),
        node_bias=bias,
    )
    return g, int(rec.get("label", 0))


def write_dataset(path, pairs: Iterable[tuple[TransactionGraph, int]], seed: int) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for g, label in pairs:
            f.write(json.dumps(graph_to_record(g, label, seed), sort_keys=True,
                               separators=(",", ":")))
            f.write("\n")


def read_dataset(path) -> list[tuple[TransactionGraph, int]]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            out.append(record_to_graph(rec))
    return out
