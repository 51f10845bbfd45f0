"""
Parallel-beam acquisition geometry

Volume coordinates are millimeters with the grid occupying
[0, nx*sx] x [0, ny*sy] x [0, nz*sz]. Detector pixel (iu, iv) has its center at
``detector_origin + iu*pitch_u*u_axis + iv*pitch_v*v_axis`` and its ray runs
through that center along ``ray_direction``.
"""
import math
from typing import Literal, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.core.config import DetectorConfig
from src.core.exceptions import GeometryError

Vec3 = Tuple[float, float, float]
ORTHO_TOL = 1e-10


class DetectorSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    nu: int
    nv: int
    pitch_u: float
    pitch_v: float

    def check(self) -> None:
        if self.nu < 2 or self.nv < 2 or self.pitch_u <= 0 or self.pitch_v <= 0:
            raise GeometryError(f"invalid detector {self}")


class ViewPose(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    view_id: Literal["pa", "lat", "custom"]
    ray_direction: Vec3
    detector_u_axis: Vec3
    detector_v_axis: Vec3
    detector_origin: Vec3

    def check(self) -> None:
        """Require a right-handed orthonormal triad (u x v = ray)"""
        d, u, v = (np.asarray(a, dtype=np.float64) for a in (self.ray_direction, self.detector_u_axis, self.detector_v_axis))
        for name, a in (("ray_direction", d), ("u_axis", u), ("v_axis", v)):
            if abs(float(a @ a) - 1.0) > ORTHO_TOL:
                raise GeometryError(f"{self.view_id} pose: {name} is not unit length")
        for name, a, b in (("u.v", u, v), ("u.ray", u, d), ("v.ray", v, d)):
            if abs(float(a @ b)) > ORTHO_TOL:
                raise GeometryError(f"{self.view_id} pose: {name} = {float(a @ b):.3g}, axes not orthogonal")
        if float(np.cross(u, v) @ d) < 0:
            raise GeometryError(f"{self.view_id} pose: triad is left-handed")

    def axes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.asarray(a, dtype=np.float64) for a in (
            self.ray_direction, self.detector_u_axis, self.detector_v_axis, self.detector_origin))


def _rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# pa triad: ray +y, u = -x, v = +z; every other view rotates it about z
_PA_RAY = np.array([0.0, 1.0, 0.0])
_PA_U = np.array([-1.0, 0.0, 0.0])
_PA_V = np.array([0.0, 0.0, 1.0])


def _clean(a: np.ndarray) -> Vec3:
    a = np.where(np.abs(a) < 1e-15, 0.0, a)
    return tuple(float(c) for c in a)


def rotated_pose(
    angle: float,
    dims: Sequence[int],
    spacing: Sequence[float],
    detector: DetectorSpec,
    view_id: Literal["pa", "lat", "custom"] = "custom",
) -> ViewPose:
    """Detector centered on the volume, triad rotated by ``angle`` radians about z"""
    rot = _rotation_z(angle)
    d, u, v = rot @ _PA_RAY, rot @ _PA_U, rot @ _PA_V
    center = np.asarray(dims, dtype=np.float64) * np.asarray(spacing, dtype=np.float64) / 2.0
    origin = center - (detector.nu - 1) / 2.0 * detector.pitch_u * u - (detector.nv - 1) / 2.0 * detector.pitch_v * v
    return ViewPose(
        view_id=view_id,
        ray_direction=_clean(d),
        detector_u_axis=_clean(u),
        detector_v_axis=_clean(v),
        detector_origin=_clean(origin),
    )


def make_pose(view: Literal["pa", "lat"], dims, spacing, detector: DetectorSpec) -> ViewPose:
    if view == "pa":
        return rotated_pose(0.0, dims, spacing, detector, view_id="pa")
    if view == "lat":
        return rotated_pose(math.pi / 2.0, dims, spacing, detector, view_id="lat")
    raise GeometryError(f"unknown canonical view {view!r}")


def make_detector(config: DetectorConfig, dims, spacing) -> DetectorSpec:
    """Default pitches make the volume footprint exactly fill the detector"""
    extent = np.asarray(dims, dtype=np.float64) * np.asarray(spacing, dtype=np.float64)
    pitch_u = config.pitch_u if config.pitch_u is not None else max(extent[0], extent[1]) / config.nu
    pitch_v = config.pitch_v if config.pitch_v is not None else extent[2] / config.nv
    return DetectorSpec(nu=config.nu, nv=config.nv, pitch_u=float(pitch_u), pitch_v=float(pitch_v))


def project_point(pose: ViewPose, x, detector: DetectorSpec) -> np.ndarray:
    """Continuous detector coordinates (u, v) of millimeter point(s) ``x`` (..., 3)"""
    _, u_axis, v_axis, origin = pose.axes()
    rel = np.asarray(x, dtype=np.float64) - origin
    u = rel @ u_axis / detector.pitch_u
    v = rel @ v_axis / detector.pitch_v
    return np.stack([u, v], axis=-1)


def check_orthogonal_pair(first: ViewPose, second: ViewPose) -> None:
    first.check()
    second.check()
    dot = float(np.asarray(first.ray_direction) @ np.asarray(second.ray_direction))
    if abs(dot) > 1e-9:
        raise GeometryError(f"views {first.view_id}/{second.view_id} are not orthogonal (ray dot {dot:.3g})")


class BiplanarGeometry(BaseModel):
    """The pa/lat acquisition shared by simulation, training and reconstruction"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    dims: Tuple[int, int, int]
    spacing: Vec3
    detector: DetectorSpec
    pose_pa: ViewPose
    pose_lat: ViewPose

    @classmethod
    def build(cls, dims, spacing, detector_config: DetectorConfig) -> "BiplanarGeometry":
        dims = tuple(int(d) for d in dims)
        spacing = tuple(float(s) for s in spacing)
        detector = make_detector(detector_config, dims, spacing)
        pose_pa = make_pose("pa", dims, spacing, detector)
        pose_lat = make_pose("lat", dims, spacing, detector)
        check_orthogonal_pair(pose_pa, pose_lat)
        return cls(dims=dims, spacing=spacing, detector=detector, pose_pa=pose_pa, pose_lat=pose_lat)

    @property
    def extent_mm(self) -> np.ndarray:
        return np.asarray(self.dims, dtype=np.float64) * np.asarray(self.spacing, dtype=np.float64)

    def poses(self) -> Tuple[ViewPose, ViewPose]:
        return self.pose_pa, self.pose_lat
