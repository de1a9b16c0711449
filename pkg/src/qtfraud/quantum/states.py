"""Exact n-qubit state engine.

One qubit per account (sorted account-id order, qubit 0 = leftmost tensor
factor). Everything is dense and exact: Hamiltonians are assembled by
Kronecker placement of Pauli factors, states are evolved as statevectors
until the environment qubit is traced out, and reductions/entropies come
from eigendecompositions. The dense representation caps the register at
``CAPACITY_QUBITS`` data qubits.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import reduce
from string import ascii_letters
from typing import IO, Iterable

import numpy as np

from ..errors import CapacityError, ValidationError
from ..graphs import TransactionGraph

CAPACITY_QUBITS = 12

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

_CX = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)  # control = first qubit of the pair


def pauli_on(n_qubits: int, factors: dict[int, np.ndarray]) -> np.ndarray:
    """Kronecker placement: ``factors`` at the given qubits, identity elsewhere."""
    mats = [factors.get(i, PAULI_I) for i in range(n_qubits)]
    return reduce(np.kron, mats)


@dataclass(frozen=True)
class HermitianOperator:
    """Hermitian matrix over an n-qubit register."""

    matrix: np.ndarray
    n_qubits: int

    def __post_init__(self) -> None:
        dim = 2 ** self.n_qubits
        if self.matrix.shape != (dim, dim):
            raise ValidationError(
                f"operator shape {self.matrix.shape} does not match {self.n_qubits} qubits"
            )
        if np.max(np.abs(self.matrix - self.matrix.conj().T)) > 1e-12:
            raise ValidationError("operator is not Hermitian within 1e-12")


@dataclass(frozen=True)
class DensityMatrix:
    """Positive semidefinite unit-trace matrix over ``m_qubits`` qubits.

    ``node_order`` records the node-to-qubit assignment when the state was
    produced from a graph, so single-node reductions are unambiguous.
    """

    matrix: np.ndarray
    m_qubits: int
    node_order: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        dim = 2 ** self.m_qubits
        if self.matrix.shape != (dim, dim):
            raise ValidationError(
                f"state shape {self.matrix.shape} does not match {self.m_qubits} qubits"
            )
        # Loose sanity check at construction; strict tolerances live in validate().
        tr = complex(np.trace(self.matrix))
        if abs(tr - 1.0) > 1e-7:
            raise ValidationError(f"state trace {tr} is not 1")
        if np.max(np.abs(self.matrix - self.matrix.conj().T)) > 1e-7:
            raise ValidationError("state is not Hermitian")

    def validate(self) -> None:
        """Check trace 1 (1e-10), Hermiticity (1e-12), eigenvalues >= -1e-10."""
        if abs(complex(np.trace(self.matrix)) - 1.0) > 1e-10:
            raise ValidationError("trace deviates from 1 beyond 1e-10")
        if np.max(np.abs(self.matrix - self.matrix.conj().T)) > 1e-12:
            raise ValidationError("Hermiticity violated beyond 1e-12")
        if np.linalg.eigvalsh(self.matrix).min() < -1e-10:
            raise ValidationError("negative eigenvalue beyond -1e-10")

    def purity(self) -> float:
        return float(np.real(np.einsum("ij,ji->", self.matrix, self.matrix)))

    def expectation(self, op: np.ndarray) -> float:
        return float(np.real(np.einsum("ij,ji->", self.matrix, op)))

    @classmethod
    def from_statevector(cls, psi: np.ndarray, n_qubits: int,
                         node_order: tuple[str, ...] | None = None) -> "DensityMatrix":
        psi = psi.reshape(-1)
        return cls(np.outer(psi, psi.conj()), n_qubits, node_order)


@dataclass(frozen=True)
class EncodingParams:
    """Entanglement-seeding angle for state encoding."""

    theta_e: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.theta_e):
            raise ValidationError(f"theta_e must be finite, got {self.theta_e}")


# ---------------------------------------------------------------------------
# Hamiltonian assembly


def build_hamiltonian(g: TransactionGraph) -> HermitianOperator:
    """Graph Hamiltonian with pair, bias and three-body terms.

    H = sum_edges w * (XX + YY + ZZ) + sum_nodes bias * Z
        + sum_triangles gamma * ZZZ
    """
    n = g.n_nodes
    _check_capacity(n)
    order = g.qubit_order()
    idx = {v: i for i, v in enumerate(order)}
    dim = 2 ** n
    h = np.zeros((dim, dim), dtype=complex)

    for src, dst, w, _ in g.edges:
        i, j = idx[src], idx[dst]
        h += w * (
            pauli_on(n, {i: PAULI_X, j: PAULI_X})
            + pauli_on(n, {i: PAULI_Y, j: PAULI_Y})
            + pauli_on(n, {i: PAULI_Z, j: PAULI_Z})
        )
    # Bias and triangle terms are diagonal; accumulate on the diagonal only.
    diag = np.zeros(dim)
    for v in order:
        diag += g.bias_of(v) * _z_diag(n, (idx[v],))
    for a, b, c, gamma in g.triangles:
        diag += gamma * _z_diag(n, (idx[a], idx[b], idx[c]))
    h[np.diag_indices(dim)] += diag
    return HermitianOperator(h, n)


def _z_diag(n: int, qubits: Iterable[int]) -> np.ndarray:
    """Diagonal of a product of Z factors on the given qubits."""
    d = np.ones(2 ** n)
    for q in qubits:
        bit = (np.arange(2 ** n) >> (n - 1 - q)) & 1
        d *= 1.0 - 2.0 * bit
    return d


# ---------------------------------------------------------------------------
# Encoding


def encode_state(g: TransactionGraph, params: EncodingParams) -> DensityMatrix:
    """Encode a graph as a (generically mixed) density matrix.

    Starts from the product state with node-bias amplitudes
    cos(pi*b/2)|0> + sin(pi*b/2)|1>, entangles each edge pair with
    exp(-i * theta_e * w * X_i X_j), couples one environment qubit through
    a CX fan-in from every data qubit (the fan-in gates commute, so the
    construction is invariant under qubit relabeling) and traces the
    environment out.
    """
    n = g.n_nodes
    _check_capacity(n)
    order = g.qubit_order()
    idx = {v: i for i, v in enumerate(order)}

    amps = []
    for v in order:
        half = math.pi * g.bias_of(v) / 2.0
        amps.append(np.array([math.cos(half), math.sin(half)], dtype=complex))
    psi = reduce(np.kron, amps)

    # Edge entanglers, sorted for a deterministic contract (they commute).
    entanglers = sorted(
        (min(idx[s], idx[d]), max(idx[s], idx[d]), t, w)
        for s, d, w, t in g.edges
    )
    psi = psi.reshape((2,) * n)
    for i, j, _, w in entanglers:
        angle = params.theta_e * w
        gate = math.cos(angle) * np.eye(4, dtype=complex) - 1j * math.sin(angle) * np.kron(
            PAULI_X, PAULI_X
        )
        psi = _apply_two_qubit(psi, n, i, j, gate)

    # Environment qubit at position n, fanned in from every data qubit.
    psi = np.stack([psi, np.zeros_like(psi)], axis=-1)  # env |0>
    for i in range(n):
        psi = _apply_two_qubit(psi, n + 1, i, n, _CX)

    mat = psi.reshape(2 ** n, 2)
    rho = mat @ mat.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho, n, node_order=order)


def _apply_two_qubit(psi: np.ndarray, n: int, i: int, j: int, gate: np.ndarray) -> np.ndarray:
    """Apply a 4x4 gate on qubits (i, j) of an n-qubit statevector tensor."""
    t = np.moveaxis(psi.reshape((2,) * n), (i, j), (0, 1)).reshape(4, -1)
    t = gate @ t
    t = np.moveaxis(t.reshape((2, 2) + (2,) * (n - 2)), (0, 1), (i, j))
    return t


# ---------------------------------------------------------------------------
# Reductions and entropy


def partial_trace(rho: DensityMatrix, keep: Iterable[int]) -> DensityMatrix:
    """Reduce the state to the sorted set of kept qubits; trace is preserved."""
    keep_t = tuple(sorted(set(int(k) for k in keep)))
    m = rho.m_qubits
    if not keep_t:
        raise ValidationError("keep must be a nonempty set of qubit indices")
    if keep_t[0] < 0 or keep_t[-1] >= m:
        raise ValidationError(f"keep {keep_t} outside 0..{m - 1}")
    if len(keep_t) == m:
        return rho

    letters = ascii_letters
    row = list(letters[:m])
    col = list(letters[m:2 * m])
    out_row, out_col = [], []
    for q in range(m):
        if q in keep_t:
            out_row.append(row[q])
            out_col.append(col[q])
        else:
            col[q] = row[q]  # contract traced qubits
    spec = "".join(row) + "".join(col) + "->" + "".join(out_row) + "".join(out_col)
    k = len(keep_t)
    reduced = np.einsum(spec, rho.matrix.reshape((2,) * (2 * m))).reshape(2 ** k, 2 ** k)
    sub_order = (
        tuple(rho.node_order[q] for q in keep_t) if rho.node_order is not None else None
    )
    return DensityMatrix(reduced, k, node_order=sub_order)


def von_neumann_entropy(rho: DensityMatrix) -> float:
    """S(rho) = -sum lambda ln lambda over eigenvalues above 1e-12."""
    lam = np.linalg.eigvalsh(rho.matrix)
    lam = lam[lam > 1e-12]
    return float(-np.sum(lam * np.log(lam)))


def _check_capacity(n: int) -> None:
    if n > CAPACITY_QUBITS:
        raise CapacityError(
            f"{n} nodes exceed the dense-simulation capacity of "
            f"{CAPACITY_QUBITS}; reduce the graph with sample_subgraph first"
        )


# ---------------------------------------------------------------------------
# Binary serialization: 8-byte little-endian qubit count, then row-major
# float64 little-endian (real, imag) pairs.


def write_density_matrix(f: IO[bytes], rho: DensityMatrix) -> None:
    f.write(struct.pack("<Q", rho.m_qubits))
    dim = 2 ** rho.m_qubits
    buf = np.empty((dim, dim, 2), dtype="<f8")
    buf[..., 0] = rho.matrix.real
    buf[..., 1] = rho.matrix.imag
    f.write(buf.tobytes())


def read_density_matrix(f: IO[bytes]) -> DensityMatrix:
    header = f.read(8)
    if len(header) != 8:
        raise ValidationError("truncated density-matrix header")
    (m,) = struct.unpack("<Q", header)
    dim = 2 ** m
    raw = f.read(dim * dim * 16)
    if len(raw) != dim * dim * 16:
        raise ValidationError("truncated density-matrix payload")
    buf = np.frombuffer(raw, dtype="<f8").reshape(dim, dim, 2)
    return DensityMatrix(buf[..., 0] + 1j * buf[..., 1], int(m))
