"""CRDT store with a monotonicity-aware query model and a replication simulator."""

from calmcrdt.lattice import (
    BoolLattice,
    GCounter,
    GSet,
    LatticeTypeError,
    LatticeValue,
    MapLattice,
    MaxNat,
    PairLattice,
    PNCounter,
    TwoPSet,
    VersionVector,
    bottom,
    leq,
    merge,
    op_delta,
)
from calmcrdt.polog import OpId, PoLog

__all__ = [
    "BoolLattice",
    "GCounter",
    "GSet",
    "LatticeTypeError",
    "LatticeValue",
    "MapLattice",
    "MaxNat",
    "OpId",
    "PNCounter",
    "PairLattice",
    "PoLog",
    "TwoPSet",
    "VersionVector",
    "bottom",
    "leq",
    "merge",
    "op_delta",
]

__version__ = "0.1.0"
