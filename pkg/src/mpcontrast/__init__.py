"""Contrastive learning as message passing: feature dynamics on augmentation graphs."""

from .analysis import clustering_report, effective_rank, equilibrium_residual, subspace_distance
from .dynamics import DynamicsConfig, TrajectoryRecord, run
from .graph import AugmentationGraph, build_synthetic_gaussians, build_threshold_graph

__all__ = [
    "AugmentationGraph",
    "DynamicsConfig",
    "TrajectoryRecord",
    "build_synthetic_gaussians",
    "build_threshold_graph",
    "clustering_report",
    "effective_rank",
    "equilibrium_residual",
    "run",
    "subspace_distance",
]
