"""
Projection-guided point features

A normalized point is placed in millimeters, projected onto both detectors
with the exact simulation poses, and each view's feature map is sampled
bilinearly at the projected pixel coordinates. The two view features and the
hash encoding are concatenated.
"""
import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.core.exceptions import ShapeError
from src.field.hash_encoding import HashEncoder, check_unit_cube
from src.projector.geometry import BiplanarGeometry, ViewPose, project_point


def view_features(feature_map: Tensor, pose: ViewPose, points_mm: np.ndarray, geometry: BiplanarGeometry) -> Tensor:
    """(N, C) bilinear lookups; points off the detector get zeros"""
    uv = project_point(pose, points_mm, geometry.detector)
    return ops.bilinear_sample_2d(feature_map, uv[:, 0], uv[:, 1])


def sample_point_features(
    points: np.ndarray,
    f_pa: Tensor,
    f_lat: Tensor,
    geometry: BiplanarGeometry,
    hash_encoder: HashEncoder,
    channels: int,
) -> Tensor:
    """(N, 3) normalized points -> (N, 2C + C_h)"""
    detector = geometry.detector
    for name, fmap in (("pa", f_pa), ("lat", f_lat)):
        if fmap.data.ndim != 3 or fmap.shape[0] != channels:
            raise ShapeError(f"{name} feature map {fmap.shape} does not have {channels} channels")
        if fmap.shape[1:] != (detector.nu, detector.nv):
            raise ShapeError(f"{name} feature map {fmap.shape[1:]} does not match detector ({detector.nu}, {detector.nv})")
    points = check_unit_cube(points)
    points_mm = points * geometry.extent_mm
    return ops.concat([
        view_features(f_pa, geometry.pose_pa, points_mm, geometry),
        view_features(f_lat, geometry.pose_lat, points_mm, geometry),
        hash_encoder.encode_points(points),
    ], axis=1)
