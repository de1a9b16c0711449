"""Property experiments: executable versions of the convergence and
stability guarantees, plus the barren-plateau trainability scan.

Every experiment is seeded and re-runnable; failures raise
:class:`ExperimentError` naming the offending sample. Each runner
produces CSV rows (for plotting) and a JSON verdict
{name, passed, statistics, seed}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from ._rng import substream
from .errors import ExperimentError, ValidationError
from .features import FeatureConfig, run_quantum, signature_from_state
from .graphs import PreprocessConfig, SyntheticConfig, TransactionGraph, preprocess
from .model import (
    ModelParams,
    TrainConfig,
    init_params,
    graph_layers,
    loss,
    pair_slots,
    triple_slots,
    LayerSlots,
)
from .quantum.conv import ChannelSpec, LayerParams, apply_channel, build_layer_unitary, conjugate
from .quantum.states import DensityMatrix
from .topology.fidelity import DistanceMatrix, distance_matrix
from .topology.matching import bottleneck_distance
from .topology.persistence import PersistenceDiagram, persistence
from .topology.rips import vietoris_rips


def fixed_test_graph() -> TransactionGraph:
    """Six accounts on a weighted cycle with one chord; preprocessed."""
    names = list("abcdef")
    edges = []
    weights = [5.0, 4.0, 6.0, 3.0, 5.5, 4.5]
    for i, w in enumerate(weights):
        edges.append((names[i], names[(i + 1) % 6], w, i))
    edges.append(("a", "d", 2.5, 6))
    raw = TransactionGraph(
        nodes=tuple(names),
        edges=tuple(edges),
        node_bias={v: 1.0 / 6 for v in names},
    )
    return preprocess(raw, PreprocessConfig(window=8))


def _scan_batch() -> tuple[list[TransactionGraph], np.ndarray]:
    base = fixed_test_graph()
    ring = TransactionGraph(
        nodes=base.nodes,
        edges=base.edges + (("b", "e", 0.9, 0), ("e", "c", 0.85, 1), ("c", "b", 0.8, 2)),
        node_bias=base.node_bias,
    )
    return [base, ring], np.array([0, 1])


# ---------------------------------------------------------------------------
# Barren-plateau scan


def barren_plateau_scan(
    depths: list[int],
    n_trials: int,
    init: str = "random",
    seed: int = 0,
) -> list[dict]:
    """Variance across parameter draws of the loss derivative for one fixed
    mid-circuit edge angle, per circuit depth.

    ``random`` draws all angles from uniform(-pi, pi); ``identity_proximal``
    from uniform(-0.1, 0.1). The loss is the supervised-plus-regularizer
    objective on a fixed two-graph batch with a fixed random head.
    """
    if init not in ("random", "identity_proximal"):
        raise ValidationError(f"unknown init {init!r}")
    if max(depths) > 12:
        raise ValidationError("depths are capped at 12 layers")
    graphs, labels = _scan_batch()
    capacity = 6
    half = math.pi if init == "random" else 0.1
    h = 1e-4
    out = []
    from .features import feature_length

    for depth in depths:
        cfg = FeatureConfig(capacity=capacity, n_layers=depth)
        tcfg = TrainConfig(lambda1=0.0, lambda2=1e-3, seed=seed)
        mid = depth // 2
        slot = 0  # first capacity pair; present in the fixed graph
        grads = []
        for trial in range(n_trials):
            # A draw covers every trainable parameter, head included.
            rng = substream(seed, "scan", init, depth, trial)
            head_w = rng.normal(scale=0.3, size=feature_length(cfg))
            head_b = float(rng.normal(scale=0.1))
            params = _draw_params(cfg, rng, half, head_w, head_b)
            grads.append(
                _mid_angle_derivative(graphs, labels, params, cfg, tcfg, mid, slot, h)
            )
        out.append({
            "depth": depth,
            "variance": float(np.var(np.asarray(grads))),
            "n_trials": n_trials,
            "init": init,
        })
    return out


def _draw_params(cfg: FeatureConfig, rng, half: float, head_w, head_b) -> ModelParams:
    layers = [
        LayerSlots(
            theta_pair=rng.uniform(-half, half, size=len(pair_slots(cfg.capacity))),
            phi=rng.uniform(-half, half, size=cfg.capacity),
            psi=rng.uniform(-half, half, size=len(triple_slots(cfg.capacity))),
            channel_logit=float(rng.uniform(-half, half)),
        )
        for _ in range(cfg.n_layers)
    ]
    return ModelParams(
        theta_e=float(rng.uniform(-half, half)),
        layers=layers,
        head_w=head_w.copy(),
        head_b=head_b,
    )


def _mid_angle_derivative(graphs, labels, params, cfg, tcfg, mid, slot, h) -> float:
    from .features import block_slices

    centroid = np.zeros(params.head_w.size)
    sl = block_slices(cfg)
    stepwise = [sl["betti0"], sl["betti1"], sl["euler"]]
    base_rows = []
    for g in graphs:
        rho, _ = run_quantum(g, params.theta_e, graph_layers(g, params, cfg.capacity), cfg)
        base_rows.append(signature_from_state(rho, g, cfg, None).phi)
    losses = []
    for sign in (+1, -1):
        trial = params.copy()
        trial.layers[mid].theta_pair[slot] += sign * h
        rows = []
        for g, base in zip(graphs, base_rows):
            rho, _ = run_quantum(g, trial.theta_e, graph_layers(g, trial, cfg.capacity), cfg)
            row = signature_from_state(rho, g, cfg, None).phi.copy()
            for block in stepwise:  # integer curves: a.e. derivative is zero
                row[block] = base[block]
            rows.append(row)
        losses.append(loss(np.vstack(rows), labels, trial, tcfg, centroid))
    return (losses[0] - losses[1]) / (2.0 * h)


def spearman_trend(table: list[dict]) -> tuple[float, float]:
    depths = [row["depth"] for row in table]
    variances = [row["variance"] for row in table]
    rho, p = spearmanr(depths, variances)
    return float(rho), float(p)


# ---------------------------------------------------------------------------
# Contractivity


def contractivity_check(
    g: TransactionGraph,
    layer: LayerParams,
    p: float,
    n_pairs: int,
    seed: int = 0,
    n_iter: int = 25,
    pair_kind: str = "random",
) -> dict:
    """Max trace-distance ratio of the channel-after-unitary map.

    Asserts non-expansiveness over sampled pairs (and along the iterate
    trajectory, whose per-step ratios fold into the estimate so the
    geometric bound is implied when the estimate is below one).
    ``pair_kind="off_diagonal"`` samples pairs differing only in their
    off-diagonal entries, where dephasing contracts strictly.
    """
    if n_pairs < 100:
        raise ValidationError("need at least 100 random pairs")
    if pair_kind not in ("random", "off_diagonal"):
        raise ValidationError(f"unknown pair_kind {pair_kind!r}")
    n = g.n_nodes
    dim = 2 ** n
    u = build_layer_unitary(g, layer)
    spec = ChannelSpec(p=p)
    rng = substream(seed, "contractivity")

    def transfer(x: DensityMatrix) -> DensityMatrix:
        return apply_channel(conjugate(x, u), spec)

    def draw_pair() -> tuple[DensityMatrix, DensityMatrix]:
        x = _random_state(dim, n, rng)
        if pair_kind == "random":
            return x, _random_state(dim, n, rng)
        delta = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        delta = delta + delta.conj().T
        np.fill_diagonal(delta, 0.0)
        # Keep the perturbed matrix positive semidefinite: shift by less
        # than the smallest eigenvalue over the perturbation's spectral norm.
        lam_min = float(np.linalg.eigvalsh(x.matrix).min())
        spec_norm = float(np.abs(np.linalg.eigvalsh(delta)).max())
        scale = 0.5 * max(lam_min, 1e-9) / max(spec_norm, 1e-12)
        return DensityMatrix(x.matrix + scale * delta, n), x

    alpha = 0.0
    worst = -1
    for k in range(n_pairs):
        x, y = draw_pair()
        before = _trace_norm(x.matrix - y.matrix)
        if before < 1e-12:
            continue
        after = _trace_norm(transfer(x).matrix - transfer(y).matrix)
        ratio = after / before
        if ratio > alpha:
            alpha, worst = ratio, k
    if alpha > 1.0 + 1e-9:
        raise ExperimentError(
            f"expansion detected: ratio {alpha} at pair {worst} (seed {seed})"
        )

    # Iterate two starts drawn like the sampled pairs; per-step ratios
    # refine the estimate.
    x, y = draw_pair()
    gaps = [_trace_norm(x.matrix - y.matrix)]
    for _ in range(n_iter):
        x, y = transfer(x), transfer(y)
        gaps.append(_trace_norm(x.matrix - y.matrix))
        if gaps[-2] > 1e-14:
            alpha = max(alpha, gaps[-1] / gaps[-2])
    if alpha > 1.0 + 1e-9:
        raise ExperimentError(f"expansion along iterates (seed {seed})")

    geometric_ok = True
    if alpha < 1.0:
        bound = gaps[0]
        for t, gap in enumerate(gaps):
            if gap > (alpha ** t) * gaps[0] * (1.0 + 1e-6):
                geometric_ok = False
                break
    return {
        "alpha_hat": alpha,
        "n_pairs": n_pairs,
        "geometric_ok": geometric_ok,
        "final_gap": gaps[-1],
        "initial_gap": gaps[0],
    }


def _random_state(dim: int, n_qubits: int, rng) -> DensityMatrix:
    gmat = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = gmat @ gmat.conj().T
    rho /= np.trace(rho).real
    return DensityMatrix(rho, n_qubits)


def _trace_norm(mat: np.ndarray) -> float:
    lam = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))
    return float(np.sum(np.abs(lam)))


# ---------------------------------------------------------------------------
# Diagram stability


def stability_check(
    base: DistanceMatrix,
    delta: float,
    n_trials: int,
    seed: int = 0,
    max_dim: int = 1,
) -> dict:
    """Perturb the distances by up to delta and verify bottleneck stability."""
    if not 0.0 < delta <= 0.1:
        raise ValidationError(f"delta must be in (0, 0.1], got {delta}")
    rng = substream(seed, "stability")
    n = base.n
    eps_max = float(base.d.max()) + delta + 0.05
    base_diag = persistence(vietoris_rips(base, eps_max, max_dim)).truncated(eps_max)
    max_ratio = 0.0
    for trial in range(n_trials):
        noise = rng.uniform(-delta, delta, size=(n, n))
        noise = np.triu(noise, 1)
        noise = noise + noise.T
        perturbed = np.clip(base.d + noise, 0.0, None)
        np.fill_diagonal(perturbed, 0.0)
        diag = persistence(
            vietoris_rips(DistanceMatrix(perturbed), eps_max, max_dim)
        ).truncated(eps_max)
        for k in range(max_dim + 1):
            w_inf = bottleneck_distance(
                _restrict(base_diag, k), _restrict(diag, k)
            )
            if w_inf > delta + 1e-9:
                raise ExperimentError(
                    f"stability violated: W_inf {w_inf} > delta {delta} "
                    f"(trial {trial}, dim {k}, seed {seed})"
                )
            max_ratio = max(max_ratio, w_inf / delta)
    return {"delta": delta, "n_trials": n_trials, "max_ratio": max_ratio}


def _restrict(diagram: PersistenceDiagram, k: int) -> PersistenceDiagram:
    return PersistenceDiagram(tuple(f for f in diagram.features if f[0] == k))


def fidelity_distance_matrix(n_points: int, seed: int = 0) -> DistanceMatrix:
    """Fidelity distances of random single-qubit states (stability fixture)."""
    rng = substream(seed, "stability-states")
    states = [_random_state(2, 1, rng) for _ in range(n_points)]
    return distance_matrix(states)


# ---------------------------------------------------------------------------
# Descent / schedule diagnostics


def descent_check(trace: list[dict]) -> dict:
    """Robbins-Monro trends of the realized step sizes and sublinear growth
    of the step-weighted squared gradient norms, by quarter sums."""
    if len(trace) < 50:
        raise ExperimentError(f"trace has {len(trace)} steps; need at least 50")
    eta = np.array([row["eta"] for row in trace], dtype=float)
    gnorm = np.array([row["grad_norm"] for row in trace], dtype=float)

    def quarter_sums(series: np.ndarray) -> list[float]:
        chunks = np.array_split(series, 4)
        return [float(c.sum()) for c in chunks]

    q_eta = quarter_sums(eta)
    q_eta_sq = quarter_sums(eta ** 2)
    q_weighted = quarter_sums(eta * gnorm ** 2)

    eta_divergent = q_eta[-1] > 0.2 * q_eta[0]
    eta_sq_convergent = q_eta_sq[-1] < 0.5 * q_eta_sq[0]
    weighted_ratio = q_weighted[-1] / q_weighted[0] if q_weighted[0] > 0 else 0.0
    return {
        "steps": len(trace),
        "eta_divergent": bool(eta_divergent),
        "eta_sq_convergent": bool(eta_sq_convergent),
        "weighted_sublinear": bool(weighted_ratio < 1.0),
        "weighted_ratio": weighted_ratio,
        "eta_quarters": q_eta,
        "eta_sq_quarters": q_eta_sq,
        "weighted_quarters": q_weighted,
    }


# ---------------------------------------------------------------------------
# Linear rate on the strongly convex head-only subproblem


def pl_rate_demo(seed: int = 0, steps: int = 80) -> dict:
    """Gradient descent on a ridge-regularized least-squares head (circuit
    parameters frozen) converges geometrically at the rate the curvature
    constants predict; both constants come from the data Gram matrix."""
    rng = substream(seed, "pl-demo")
    n, d = 48, 10
    x = rng.normal(size=(n, d))
    w_true = rng.normal(size=d)
    y = x @ w_true + 0.05 * rng.normal(size=n)
    lam = 0.1

    gram = x.T @ x / n
    mu = 2.0 * (float(np.linalg.eigvalsh(gram).min()) + lam)
    smooth = 2.0 * (float(np.linalg.eigvalsh(gram).max()) + lam)
    w_star = np.linalg.solve(gram + lam * np.eye(d), x.T @ y / n)

    def objective(w):
        r = x @ w - y
        return float(r @ r) / n + lam * float(w @ w)

    f_star = objective(w_star)
    eta = 1.0 / smooth
    w = np.zeros(d)
    gap0 = objective(w) - f_star
    passed = True
    worst = 0.0
    for t in range(1, steps + 1):
        grad = 2.0 * (x.T @ (x @ w - y)) / n + 2.0 * lam * w
        w = w - eta * grad
        gap = objective(w) - f_star
        bound = (1.0 - eta * mu) ** t * gap0 * (1.0 + 1e-9)
        worst = max(worst, gap / bound if bound > 0 else 0.0)
        if gap > bound:
            passed = False
            break
    return {"mu": mu, "smooth": smooth, "passed": passed, "worst_ratio": worst,
            "steps": steps}
