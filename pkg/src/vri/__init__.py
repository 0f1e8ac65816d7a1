"""Dynamics, Lagrangian descriptors and branching ratios on an asymmetric valley-ridge-inflection potential."""

__version__ = "0.1.0"

from .potential import (  # noqa: E402
    ConvergenceError,
    CriticalPoint,
    DomainRect,
    SystemParams,
    depth,
    eval_gradient,
    eval_hessian,
    eval_potential,
    find_critical_points,
    flatness,
)
from .dynamics import PhaseState, EventSpec, Trajectory, integrate, classify_fate  # noqa: E402
from .descriptors import SectionSpec, LDField, compute_field, ld_point  # noqa: E402
from .manifolds import ManifoldCurve, LobeRegion, extract_manifolds, identify_lobes, polygon_area  # noqa: E402
from .experiments import BranchingResult, FitResult, branching_run, fit_polynomial, sweep  # noqa: E402

__all__ = [
    "ConvergenceError", "CriticalPoint", "DomainRect", "SystemParams", "depth", "eval_gradient",
    "eval_hessian", "eval_potential", "find_critical_points", "flatness", "PhaseState", "EventSpec",
    "Trajectory", "integrate", "classify_fate", "SectionSpec", "LDField", "compute_field", "ld_point",
    "ManifoldCurve", "LobeRegion", "extract_manifolds", "identify_lobes", "polygon_area",
    "BranchingResult", "FitResult", "branching_run", "fit_polynomial", "sweep",
]
