"""Monocular 3D localization from dense 2D-3D constraints, at desk scale."""

from __future__ import annotations

from .geometry import Box3D, CameraIntrinsics, Dimensions, ObjectPose, PixelPoint, PixelRect
from .scene import CorruptionConfig, ImageSpec, PlacementRanges, SceneSample
from .energy import EnergyConfig
from .cost_volume import DepthBelief, DepthGrid, refine_depth
from .solvers import SolverResult, solve_depth_1d

__version__ = "0.1.0"

__all__ = [
    "Box3D",
    "CameraIntrinsics",
    "CorruptionConfig",
    "DepthBelief",
    "DepthGrid",
    "Dimensions",
    "EnergyConfig",
    "ImageSpec",
    "ObjectPose",
    "PixelPoint",
    "PixelRect",
    "PlacementRanges",
    "SceneSample",
    "SolverResult",
    "refine_depth",
    "solve_depth_1d",
]
