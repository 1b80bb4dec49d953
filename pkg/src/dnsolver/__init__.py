"""Confidence-based iterative depth-normal solver for planar depth refinement and completion."""

from .confidence import (
    ConfidenceConfig,
    View,
    geometric_confidence,
    gt_depth_confidence,
    gt_normal_confidence,
    hybrid_confidence,
)
from .core import (
    Intrinsics,
    ParamNormal,
    Point3,
    Pose,
    SlantedPlane,
    normalized_coords,
    param_from_unit,
    plane_from,
    unit_from_param,
    unproject,
)
from .metrics import DepthMetrics, NormalMetrics, depth_metrics, normal_metrics
from .solver import (
    NeighborhoodPattern,
    SolverConfig,
    SolverState,
    bilateral_weight,
    d_step,
    energy_d,
    energy_n,
    n_step,
    neighborhood,
    propagate_depth,
    solve,
)

__version__ = "0.1.0"
