from .states import (
    CAPACITY_QUBITS,
    DensityMatrix,
    EncodingParams,
    HermitianOperator,
    build_hamiltonian,
    encode_state,
    partial_trace,
    read_density_matrix,
    von_neumann_entropy,
    write_density_matrix,
)
from .conv import (
    ChannelSpec,
    LayerParams,
    QuantumEmbedding,
    apply_channel,
    build_layer_unitary,
    correlation_entropy,
    forward,
)

__all__ = [
    "CAPACITY_QUBITS",
    "DensityMatrix",
    "EncodingParams",
    "HermitianOperator",
    "build_hamiltonian",
    "encode_state",
    "partial_trace",
    "read_density_matrix",
    "von_neumann_entropy",
    "write_density_matrix",
    "ChannelSpec",
    "LayerParams",
    "QuantumEmbedding",
    "apply_channel",
    "build_layer_unitary",
    "correlation_entropy",
    "forward",
]
