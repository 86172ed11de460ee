"""Numerical engine for detecting, reconstructing and tracking isometries
between chart-based Riemannian metrics.

The building blocks are truncated power-series (jet) arithmetic, geodesic
integration of chart metrics, jet invariants of normal-coordinate charts,
isometry checking/propagation over ball atlases, a signature-matching
parameter tracker, and Bergman metrics of plane and C^2 domains.
"""

__version__ = "0.1.0"

from .jets import (
    Jet,
    JetError,
    JetMap,
    jet_arith,
    jet_compose,
    jet_invert,
    jet_space,
    jet_truncate,
)

__all__ = [
    "Jet",
    "JetError",
    "JetMap",
    "jet_arith",
    "jet_compose",
    "jet_invert",
    "jet_space",
    "jet_truncate",
    "__version__",
]
