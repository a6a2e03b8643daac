"""LiDAR-guided motion estimation and motion-compensated video fusion."""

from .geometry import (
    CameraIntrinsics,
    PixelPoint,
    PointCloud,
    RigidTransform,
    compose,
    inverse,
    project,
    transform_cloud,
)
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "PixelPoint",
    "PointCloud",
    "RigidTransform",
    "compose",
    "inverse",
    "project",
    "transform_cloud",
    "KERNEL_BACKEND",
]
