"""Numerical Liouville transformations for perturbed free Hill operators on strips."""

from .expr import PotentialExpr, evaluate, evaluate_many, parse
from .geometry import GridSpec, HypothesisReport, Strip, check_hypothesis, edge_distance, thurston_factor
from .ode import HillState, IntegratorConfig, PathPolyline, integrate
from .liouville import LiouvilleMap, construct_map, evaluate_y

__all__ = [
    "PotentialExpr", "parse", "evaluate", "evaluate_many",
    "Strip", "GridSpec", "HypothesisReport", "check_hypothesis", "edge_distance", "thurston_factor",
    "HillState", "IntegratorConfig", "PathPolyline", "integrate",
    "LiouvilleMap", "construct_map", "evaluate_y",
]
