"""
Parallel-beam X-ray physics: geometry, projection, adjoint, FBP baseline
"""
from .fbp import fbp, fbp_two_view
from .geometry import BiplanarGeometry, DetectorSpec, ViewPose, make_detector, make_pose, project_point, rotated_pose
from .nullspace import null_space_witness
from .operator import Projection, attenuate, backproject, normalize_drr, project_parallel

__all__ = [
    "BiplanarGeometry",
    "DetectorSpec",
    "ViewPose",
    "Projection",
    "make_detector",
    "make_pose",
    "rotated_pose",
    "project_point",
    "project_parallel",
    "backproject",
    "attenuate",
    "normalize_drr",
    "fbp",
    "fbp_two_view",
    "null_space_witness",
]
