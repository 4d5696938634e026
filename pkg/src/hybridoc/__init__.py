"""Hybrid derivative-free / smooth optimization for optimal control problems
with floor-truncated Mayer costs."""

from .kernels import backend, compiled_available
from .problem import BlackboxResult, NlpProblem, Partition, evaluate_blackbox, violation
from .smooth import SolverSettings, Status
from .smoothing import FloorApprox, smooth_floor

__version__ = "0.1.0"

__all__ = [
    "BlackboxResult",
    "FloorApprox",
    "NlpProblem",
    "Partition",
    "SolverSettings",
    "Status",
    "backend",
    "compiled_available",
    "evaluate_blackbox",
    "smooth_floor",
    "violation",
]
