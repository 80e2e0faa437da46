"""ctkit: parallel-beam CT simulation, FBP/SIRT reconstruction and small
from-scratch networks for low-dose reconstruction experiments."""

from ctkit.projection import (
    ImageGrid,
    IntensityRecord,
    ParallelGeometry,
    Sinogram,
    SystemMatrix,
    back_project,
    build_system_matrix,
    forward_project,
    log_normalize,
    simulate_intensity,
)
from ctkit.fbp import FilterSpec, fbp_reconstruct, filter_projections
from ctkit.sirt import SirtState, sirt_init, sirt_reconstruct, sirt_step

__version__ = "0.1.0"

__all__ = [
    "ImageGrid",
    "IntensityRecord",
    "ParallelGeometry",
    "Sinogram",
    "SystemMatrix",
    "back_project",
    "build_system_matrix",
    "forward_project",
    "log_normalize",
    "simulate_intensity",
    "FilterSpec",
    "fbp_reconstruct",
    "filter_projections",
    "SirtState",
    "sirt_init",
    "sirt_reconstruct",
    "sirt_step",
]
