"""Local 3D features (Harris3D/ISS/SIFT3D keypoints, SIFT and SHOT descriptors),
FV/VLAD encoding and a one-vs-all linear SVM benchmark for plant point clouds."""

from .cloud import (
    CloudResolution,
    NormalField,
    PointCloud,
    cloud_resolution,
    estimate_normals,
    knn,
    load_cloud,
    radius_search,
)
from .errors import Plant3DError

__version__ = "0.1.0"

__all__ = [
    "CloudResolution",
    "NormalField",
    "Plant3DError",
    "PointCloud",
    "cloud_resolution",
    "estimate_normals",
    "knn",
    "load_cloud",
    "radius_search",
]
