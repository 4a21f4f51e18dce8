"""Mean-radius curves, Zorich transforms and BIP diagnostics for quasiconformal maps."""

from .errors import (
    BranchJumpError,
    DegenerateImageError,
    DomainError,
    EstimationError,
    InvalidInputError,
    OrientationError,
)
from .mapzoo import QCMap, builtin_zoo, get_map
from .radius import MeanRadiusCurve, log_transform_curve, mean_radius
from .transform import TransformedMap, transform_of
from .zorich import ZorichMap, zorich_map

__version__ = "0.1.0"

__all__ = [
    "BranchJumpError",
    "DegenerateImageError",
    "DomainError",
    "EstimationError",
    "InvalidInputError",
    "MeanRadiusCurve",
    "OrientationError",
    "QCMap",
    "TransformedMap",
    "ZorichMap",
    "__version__",
    "builtin_zoo",
    "get_map",
    "log_transform_curve",
    "mean_radius",
    "transform_of",
    "zorich_map",
]
