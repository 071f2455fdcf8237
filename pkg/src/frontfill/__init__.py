"""frontfill: quasi-uniform point clouds for meshless PDE discretization.

Fills arbitrary d-dimensional domains with advancing-front Poisson-disc
points, either sequentially or with a staged multi-threaded algorithm built
on coupled spatial-index and work-distribution trees with lock-free cell
claiming.
"""

from .fill import (
    ExpansionEntry,
    FillConfig,
    FillError,
    FillStats,
    PointSet,
    expand_point,
    fill_parallel,
    fill_sequential,
    place_seeds,
)
from .geometry import (
    Box,
    ConstantSpacing,
    Disc,
    RadialLinearSpacing,
    estimate_count,
    generate_candidates,
    radial_linear_for,
)
from .rng import RandomStream
from .spatial_index import CapacityError, SpatialTree
from .validate import (
    ValidationReport,
    check_coverage,
    check_spacing,
    full_report,
    repair_proximity,
)
from .work_tree import CellState, ClaimResult, ProtocolError, RestartQueue, WorkTree

__version__ = "0.1.0"

__all__ = [
    "Box",
    "CapacityError",
    "CellState",
    "ClaimResult",
    "ConstantSpacing",
    "Disc",
    "ExpansionEntry",
    "FillConfig",
    "FillError",
    "FillStats",
    "PointSet",
    "ProtocolError",
    "RadialLinearSpacing",
    "RandomStream",
    "RestartQueue",
    "SpatialTree",
    "ValidationReport",
    "WorkTree",
    "check_coverage",
    "check_spacing",
    "estimate_count",
    "expand_point",
    "fill_parallel",
    "fill_sequential",
    "full_report",
    "generate_candidates",
    "place_seeds",
    "radial_linear_for",
    "repair_proximity",
]
