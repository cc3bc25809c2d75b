"""Barrier oracles for the cones used by the solver."""

from .base import Cone, ConeState, DenseFactor
from .qkd import QKDCone, QKDState
from .standard import NonnegCone, RelEntropyCone, SOCCone, nonneg_barrier, relative_entropy, soc_is_interior

__all__ = [
    "Cone",
    "ConeState",
    "DenseFactor",
    "QKDCone",
    "QKDState",
    "NonnegCone",
    "SOCCone",
    "RelEntropyCone",
    "nonneg_barrier",
    "relative_entropy",
    "soc_is_interior",
]
