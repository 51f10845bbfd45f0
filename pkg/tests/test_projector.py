"""
Test parallel-beam geometry, projection, FBP and the null-space witness
"""
import math

import numpy as np
import pytest

from src.core.config import DetectorConfig
from src.core.exceptions import DomainError, GeometryError
from src.projector.fbp import fbp_two_view, ram_lak_kernel
from src.projector.geometry import (
    BiplanarGeometry,
    ViewPose,
    check_orthogonal_pair,
    make_detector,
    make_pose,
    project_point,
    rotated_pose,
)
from src.projector.nullspace import null_space_witness
from src.projector.operator import (
    Projection,
    attenuate,
    backproject_array,
    log_measurement,
    normalize_drr,
    project_array,
    project_parallel,
)
from src.volume.grid import VoxelGrid

DIMS = (4, 4, 4)
SPACING = (1.0, 1.0, 1.0)


@pytest.fixture
def geometry():
    return BiplanarGeometry.build(DIMS, SPACING, DetectorConfig(nu=4, nv=4))


def test_default_pitch_fills_detector():
    detector = make_detector(DetectorConfig(nu=8, nv=4), (16, 8, 8), (0.5, 1.0, 2.0))
    assert detector.pitch_u == pytest.approx(1.0)
    assert detector.pitch_v == pytest.approx(4.0)


def test_canonical_poses(geometry):
    pa, lat = geometry.poses()
    assert pa.ray_direction == (0.0, 1.0, 0.0)
    assert pa.detector_u_axis == (-1.0, 0.0, 0.0)
    assert pa.detector_v_axis == (0.0, 0.0, 1.0)
    assert lat.ray_direction == (-1.0, 0.0, 0.0)
    assert lat.detector_u_axis == (0.0, -1.0, 0.0)
    check_orthogonal_pair(pa, lat)


def test_same_view_twice_is_not_orthogonal(geometry):
    with pytest.raises(GeometryError):
        check_orthogonal_pair(geometry.pose_pa, geometry.pose_pa)


def test_left_handed_pose_rejected(geometry):
    pose = geometry.pose_pa.model_copy(update={"detector_u_axis": (1.0, 0.0, 0.0)})
    with pytest.raises(GeometryError, match="left-handed"):
        pose.check()


def test_non_unit_axis_rejected():
    pose = ViewPose(view_id="custom", ray_direction=(0.0, 2.0, 0.0), detector_u_axis=(-1.0, 0.0, 0.0),
                    detector_v_axis=(0.0, 0.0, 1.0), detector_origin=(0.0, 0.0, 0.0))
    with pytest.raises(GeometryError):
        pose.check()


def test_voxel_centers_project_to_pixel_centers(geometry):
    for i, j, k in [(0, 0, 0), (3, 1, 2), (1, 3, 3)]:
        center = np.array([i + 0.5, j + 0.5, k + 0.5])
        np.testing.assert_allclose(project_point(geometry.pose_pa, center, geometry.detector), [3 - i, k], atol=1e-12)
        np.testing.assert_allclose(project_point(geometry.pose_lat, center, geometry.detector), [3 - j, k], atol=1e-12)


def test_projection_matches_axis_sums(geometry):
    rng = np.random.default_rng(0)
    values = rng.uniform(0.0, 1.0, DIMS)
    grid = VoxelGrid(values)
    assert grid.values.dtype == np.float64
    pa = project_parallel(grid, geometry.pose_pa, geometry.detector)
    lat = project_parallel(grid, geometry.pose_lat, geometry.detector)
    np.testing.assert_allclose(pa.log_values, values.sum(axis=1)[::-1, :], rtol=1e-9)
    np.testing.assert_allclose(lat.log_values, values.sum(axis=0)[::-1, :], rtol=1e-9)


def test_projection_is_linear(geometry):
    rng = np.random.default_rng(4)
    x, y = rng.uniform(0.0, 1.0, (2, *DIMS))
    for pose in geometry.poses():
        px = project_parallel(VoxelGrid(x), pose, geometry.detector).log_values
        py = project_parallel(VoxelGrid(y), pose, geometry.detector).log_values
        mixed = project_parallel(VoxelGrid(0.3 * x + 0.6 * y), pose, geometry.detector).log_values
        np.testing.assert_allclose(mixed, 0.3 * px + 0.6 * py, rtol=1e-12, atol=1e-12)


def test_point_projection_ignores_motion_along_the_ray(geometry):
    rng = np.random.default_rng(5)
    poses = [*geometry.poses(), rotated_pose(math.radians(30.0), DIMS, SPACING, geometry.detector)]
    for pose in poses:
        d = np.asarray(pose.ray_direction)
        for x, t in zip(rng.uniform(0.0, 4.0, (20, 3)), rng.uniform(-10.0, 10.0, 20)):
            np.testing.assert_allclose(project_point(pose, x + t * d, geometry.detector),
                                       project_point(pose, x, geometry.detector), atol=1e-12)


def test_point_projection_of_random_points(geometry):
    points = np.random.default_rng(6).uniform(0.0, 4.0, (20, 3))
    pa = project_point(geometry.pose_pa, points, geometry.detector)
    lat = project_point(geometry.pose_lat, points, geometry.detector)
    np.testing.assert_allclose(pa, np.stack([3.5 - points[:, 0], points[:, 2] - 0.5], axis=1), atol=1e-12)
    np.testing.assert_allclose(lat, np.stack([3.5 - points[:, 1], points[:, 2] - 0.5], axis=1), atol=1e-12)


def test_uniform_volume_projects_to_path_length():
    dims, spacing = (6, 6, 6), (0.5, 0.5, 0.5)
    geometry = BiplanarGeometry.build(dims, spacing, DetectorConfig(nu=6, nv=6))
    grid = VoxelGrid(np.ones(dims))
    p = project_parallel(grid, geometry.pose_pa, geometry.detector)
    np.testing.assert_allclose(p.log_values, 3.0)


def _clipped_length(p0, d, lo, hi):
    """Length of the line p0 + t d inside the box [lo, hi]"""
    t_in, t_out = -np.inf, np.inf
    for axis in range(3):
        if abs(d[axis]) < 1e-12:
            if not lo[axis] < p0[axis] < hi[axis]:
                return 0.0
            continue
        a, b = (lo[axis] - p0[axis]) / d[axis], (hi[axis] - p0[axis]) / d[axis]
        t_in, t_out = max(t_in, min(a, b)), min(t_out, max(a, b))
    return max(0.0, t_out - t_in)


def _brute_force_projection(values, spacing, pose, detector):
    d, u, v, origin = pose.axes()
    spacing = np.asarray(spacing)
    out = np.zeros((detector.nu, detector.nv))
    for iu, iv in np.ndindex(out.shape):
        p0 = origin + iu * detector.pitch_u * u + iv * detector.pitch_v * v
        for idx in np.ndindex(values.shape):
            lo = np.asarray(idx) * spacing
            out[iu, iv] += values[idx] * _clipped_length(p0, d, lo, lo + spacing)
    return out


@pytest.mark.parametrize("degrees", [0.0, 30.0, 90.0, 135.0])
def test_projection_matches_brute_force_intersections(degrees):
    dims, spacing = (4, 4, 4), (1.0, 0.8, 1.2)
    detector = make_detector(DetectorConfig(nu=4, nv=4), dims, spacing)
    pose = rotated_pose(math.radians(degrees), dims, spacing, detector)
    values = np.random.default_rng(1).uniform(0.0, 1.0, dims)
    fast = project_parallel(VoxelGrid(values, spacing), pose, detector).log_values
    np.testing.assert_allclose(fast, _brute_force_projection(values, spacing, pose, detector), rtol=1e-9, atol=1e-9)


def test_backprojection_is_the_adjoint(geometry):
    rng = np.random.default_rng(2)
    poses = [*geometry.poses(), *(rotated_pose(a, DIMS, SPACING, geometry.detector) for a in (0.4, 1.1, 2.5))]
    for n in range(25):
        pose = poses[n % len(poses)]
        x = rng.normal(size=DIMS)
        y = rng.normal(size=(4, 4))
        ax = project_array(x, SPACING, pose, geometry.detector)
        aty = backproject_array(y, pose, geometry.detector, DIMS, SPACING)
        gap = abs(float(np.sum(ax * y)) - float(np.sum(x * aty)))
        assert gap / (np.linalg.norm(ax) * np.linalg.norm(y)) < 1e-9


def test_parallel_workers_give_the_same_matrix(geometry):
    rng = np.random.default_rng(3)
    values = rng.uniform(size=DIMS)
    one = project_array(values, SPACING, geometry.pose_lat, geometry.detector, workers=1)
    three = project_array(values, SPACING, geometry.pose_lat, geometry.detector, workers=3)
    np.testing.assert_allclose(one, three)


def test_beer_lambert(geometry):
    p = Projection(geometry.pose_pa, geometry.detector, np.full((4, 4), 2.0))
    intensity = attenuate(p, 100.0)
    np.testing.assert_allclose(intensity, 100.0 * math.exp(-2.0))
    np.testing.assert_allclose(log_measurement(intensity, 100.0), 2.0)
    with pytest.raises(DomainError):
        attenuate(p, 0.0)
    with pytest.raises(DomainError):
        log_measurement(np.zeros((4, 4)), 1.0)


def test_normalize_drr_handles_constant_images(geometry):
    flat = Projection(geometry.pose_pa, geometry.detector, np.full((4, 4), 3.0))
    assert not normalize_drr(flat).any()
    ramp = Projection(geometry.pose_pa, geometry.detector, np.arange(16.0).reshape(4, 4))
    normalized = normalize_drr(ramp)
    assert normalized.min() == 0.0 and normalized.max() == 1.0


def test_ram_lak_kernel_taps():
    kernel = ram_lak_kernel(8, 1.0)
    assert kernel[0] == pytest.approx(0.25)
    assert kernel[2] == 0.0 and kernel[4] == 0.0
    assert kernel[1] == pytest.approx(-1.0 / math.pi ** 2)
    assert kernel[1] == pytest.approx(kernel[7])


def test_fbp_two_view_recovers_a_central_blob():
    dims = (16, 16, 16)
    geometry = BiplanarGeometry.build(dims, SPACING, DetectorConfig(nu=16, nv=16))
    points = (np.indices(dims).transpose(1, 2, 3, 0) + 0.5) / 16.0
    ball = (np.sum((points - 0.5) ** 2, axis=-1) <= 0.3 ** 2).astype(np.float64) * 0.5
    grid = VoxelGrid(ball)
    p_pa = project_parallel(grid, geometry.pose_pa, geometry.detector)
    p_lat = project_parallel(grid, geometry.pose_lat, geometry.detector)
    recon = fbp_two_view(p_pa, p_lat, dims, SPACING)
    assert recon.dims == dims
    assert recon.values.min() >= 0.0 and recon.values.max() <= 1.0
    assert recon.values[8, 8, 8] > recon.values[0, 0, 0]


def test_fbp_rejects_parallel_views(geometry):
    p = Projection(geometry.pose_pa, geometry.detector, np.zeros((4, 4)))
    with pytest.raises(GeometryError):
        fbp_two_view(p, p, DIMS, SPACING)


def test_null_space_witness_has_identical_projections():
    dims = (4, 4, 4)
    geometry = BiplanarGeometry.build(dims, SPACING, DetectorConfig(nu=4, nv=4))
    x, x_prime = null_space_witness(dims, SPACING, geometry.poses(), geometry.detector, seed=0)
    assert np.abs(x.values.astype(np.float64) - x_prime.values).max() > 0.2
    for pose in geometry.poses():
        a = project_array(x.values, SPACING, pose, geometry.detector)
        b = project_array(x_prime.values, SPACING, pose, geometry.detector)
        assert np.linalg.norm(a - b) <= 1e-8


def test_null_space_witness_size_limit():
    dims = (8, 8, 8)
    geometry = BiplanarGeometry.build(dims, SPACING, DetectorConfig(nu=8, nv=8))
    with pytest.raises(DomainError):
        null_space_witness(dims, SPACING, geometry.poses(), geometry.detector)
