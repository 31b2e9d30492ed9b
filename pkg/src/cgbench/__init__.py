"""Benchmark harness for 3D correspondence grouping methods."""
from .geometry import PointCloud, RigidTransform, estimate_rigid_transform
from .features import CorrespondenceSet
from .grouping import METHODS, GrouperParams, GroupingResult, run_method

__version__ = "0.1.0"

__all__ = [
    "PointCloud", "RigidTransform", "estimate_rigid_transform", "CorrespondenceSet",
    "METHODS", "GrouperParams", "GroupingResult", "run_method", "__version__",
]
