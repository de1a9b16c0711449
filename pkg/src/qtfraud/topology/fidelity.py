"""Weighted fidelity metric between quantum states.

The pairwise dissimilarity d(i,j) = sqrt(1 - F_w(rho_i, rho_j)) feeds the
Vietoris-Rips filtration. The weight matrix lets callers encode priors;
it is normalized so that the identity weight recovers plain Uhlmann
fidelity, which keeps d(i,i) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ValidationError
from ..quantum.states import DensityMatrix


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric positive-definite prior with trace fixed to the dimension."""

    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "w", w)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError(f"weight matrix must be square, got {w.shape}")
        if np.max(np.abs(w - w.T)) > 1e-12:
            raise ValidationError("weight matrix must be symmetric")
        if np.linalg.eigvalsh(w).min() <= 0.0:
            raise ValidationError("weight matrix must be positive definite")
        if abs(np.trace(w) - w.shape[0]) > 1e-10:
            raise ValidationError(
                f"weight matrix trace {np.trace(w):.12g} must equal dim {w.shape[0]}"
            )

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "WeightMatrix":
        return cls(np.eye(dim))


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric dissimilarity matrix with a zero diagonal."""

    d: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.d, dtype=float)
        object.__setattr__(self, "d", d)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValidationError(f"distance matrix must be square, got {d.shape}")
        if np.max(np.abs(d - d.T)) > 1e-10:
            raise ValidationError("distance matrix must be symmetric")
        if np.max(np.abs(np.diag(d))) != 0.0:
            raise ValidationError("distance matrix diagonal must be exactly zero")
        if d.min() < 0.0:
            raise ValidationError("distances must be nonnegative")

    @property
    def n(self) -> int:
        return self.d.shape[0]


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    # Eigenvalues at the numerical-noise floor are rank-deficiency artifacts;
    # taking their square root would inject O(sqrt(eps)) spurious directions.
    floor = 64.0 * np.finfo(float).eps * max(float(lam.max()), 0.0)
    lam = np.where(lam > floor, lam, 0.0)
    return (vec * np.sqrt(lam)) @ vec.conj().T


def weighted_fidelity(rho_i: DensityMatrix, rho_j: DensityMatrix, w: WeightMatrix) -> float:
    """F_w = (Tr sqrt(sqrt(rho_i) W rho_j W sqrt(rho_i)))^2 * dim^2 / Tr(W)^2.

    With W = I (trace dim) this is exactly the Uhlmann fidelity. The trace
    of the matrix square root is evaluated as the nuclear norm of
    sqrt(W rho_j W) sqrt(rho_i), whose singular values come out of the SVD
    directly instead of as square roots of near-zero eigenvalues. Clamped
    to [0, 1].
    """
    if rho_i.m_qubits != rho_j.m_qubits:
        raise ValidationError("states must have equal dimension")
    dim = 2 ** rho_i.m_qubits
    if w.dim != dim:
        raise ValidationError(f"weight dim {w.dim} does not match state dim {dim}")
    root_i = _sqrtm_psd(rho_i.matrix)
    weighted = w.w @ rho_j.matrix @ w.w
    root_j = _sqrtm_psd(0.5 * (weighted + weighted.conj().T))
    singular = np.linalg.svd(root_j @ root_i, compute_uv=False)
    fid = float(np.sum(singular) ** 2) * dim ** 2 / float(np.trace(w.w)) ** 2
    return min(max(fid, 0.0), 1.0)


def qubit_uhlmann_fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """Closed form for 2x2 states: F = Tr(ab) + 2 sqrt(det a det b)."""
    tr = float(np.real(a[0, 0] * b[0, 0] + a[0, 1] * b[1, 0]
                       + a[1, 0] * b[0, 1] + a[1, 1] * b[1, 1]))
    det_a = float(np.real(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]))
    det_b = float(np.real(b[0, 0] * b[1, 1] - b[0, 1] * b[1, 0]))
    fid = tr + 2.0 * np.sqrt(max(det_a, 0.0) * max(det_b, 0.0))
    return min(max(fid, 0.0), 1.0)


def distance_matrix(
    states: Sequence[DensityMatrix], w: WeightMatrix | None = None
) -> DistanceMatrix:
    """Pairwise d(i,j) = sqrt(1 - F_w); symmetrized by averaging both orders.

    Single-qubit states under the identity weight take the closed-form
    Uhlmann route (symmetric by construction); everything else goes
    through the general eigendecomposition path.
    """
    if len(states) < 2:
        raise ValidationError("need at least two states")
    dim = 2 ** states[0].m_qubits
    if w is None:
        w = WeightMatrix.identity(dim)
    use_closed_form = dim == 2 and np.array_equal(w.w, np.eye(2))
    n = len(states)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if use_closed_form:
                dij = np.sqrt(max(0.0, 1.0 - qubit_uhlmann_fidelity(
                    states[i].matrix, states[j].matrix)))
                d[i, j] = d[j, i] = dij
            else:
                dij = np.sqrt(max(0.0, 1.0 - weighted_fidelity(states[i], states[j], w)))
                dji = np.sqrt(max(0.0, 1.0 - weighted_fidelity(states[j], states[i], w)))
                d[i, j] = d[j, i] = 0.5 * (dij + dji)
    return DistanceMatrix(d)
