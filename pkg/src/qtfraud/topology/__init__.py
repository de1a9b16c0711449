from .fidelity import DistanceMatrix, WeightMatrix, distance_matrix, weighted_fidelity
from .rips import FilteredComplex, vietoris_rips
from .persistence import (
    PersistenceDiagram,
    betti_at,
    euler_characteristic,
    persistence,
)
from .landscapes import LandscapeFunction, landscape, landscape_gradient, landscape_l1
from .matching import bottleneck_distance, wasserstein2

__all__ = [
    "DistanceMatrix",
    "WeightMatrix",
    "distance_matrix",
    "weighted_fidelity",
    "FilteredComplex",
    "vietoris_rips",
    "PersistenceDiagram",
    "betti_at",
    "euler_characteristic",
    "persistence",
    "LandscapeFunction",
    "landscape",
    "landscape_gradient",
    "landscape_l1",
    "bottleneck_distance",
    "wasserstein2",
]
