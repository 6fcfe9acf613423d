"""Differentiable 2D Voronoi tessellation with a small reverse-mode autodiff."""

from .autodiff import AutodiffError, Tape, Var
from .delaunay import Triangulation, TriangulationError, triangulate
from .optimize import (
    DEFAULT_TOTAL_POPULATION,
    Adam,
    ConstantDensity,
    GradcheckReport,
    LossSpec,
    OptimizationResult,
    RunSchedule,
    SineDensity,
    evaluate,
    gradcheck,
    run_optimization,
)
from .voronoi import (
    Boundary,
    DegenerateGeometryError,
    DiagramSnapshot,
    VoronoiDiagram,
    build_diagram,
    clip_diagram,
    default_omega,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AutodiffError",
    "Boundary",
    "ConstantDensity",
    "DEFAULT_TOTAL_POPULATION",
    "DegenerateGeometryError",
    "DiagramSnapshot",
    "GradcheckReport",
    "LossSpec",
    "OptimizationResult",
    "RunSchedule",
    "SineDensity",
    "Tape",
    "Triangulation",
    "TriangulationError",
    "Var",
    "VoronoiDiagram",
    "build_diagram",
    "clip_diagram",
    "default_omega",
    "evaluate",
    "gradcheck",
    "run_optimization",
    "triangulate",
]
