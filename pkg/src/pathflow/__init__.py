"""Dynamic optimal transport on a 2-D bulk domain coupled to a
transport-favoring curve, with optimization over the curve itself."""

from .config import RunConfig, load_config
from .curvereg import RegularizerValue, discrete_regularizer, tangent_point_radius
from .geometry import Polyline, SpaceTimeMesh, build_mesh, project_box, remesh
from .pathopt import PathOptConfig, PathTrace, optimize_path
from .transport import (
    BoundaryData,
    GaussianEnd,
    PrimalState,
    SolveReport,
    SolverConfig,
    discrete_action,
    make_boundary_data,
    solve_fixed_curve,
)

__all__ = [
    "BoundaryData",
    "GaussianEnd",
    "PathOptConfig",
    "PathTrace",
    "Polyline",
    "PrimalState",
    "RegularizerValue",
    "RunConfig",
    "SolveReport",
    "SolverConfig",
    "SpaceTimeMesh",
    "build_mesh",
    "discrete_action",
    "discrete_regularizer",
    "load_config",
    "make_boundary_data",
    "optimize_path",
    "project_box",
    "remesh",
    "solve_fixed_curve",
    "tangent_point_radius",
]

__version__ = "0.1.0"
