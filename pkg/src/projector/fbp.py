"""
Filtered backprojection baseline

Ramp filtering uses the spatial Ram-Lak kernel applied row-wise along u by
FFT with zero padding. Backprojection inside FBP is normalised (Aᵀq / Aᵀ1) so
every voxel receives the filtered value of the rays through it.
"""
import math
from typing import Sequence

import numpy as np
from scipy import fft

from src.core.exceptions import GeometryError
from src.projector.geometry import check_orthogonal_pair
from src.projector.operator import Projection, backproject_array
from src.volume.grid import VoxelGrid


def ram_lak_kernel(length: int, tau: float) -> np.ndarray:
    """Circular Ram-Lak kernel of ``length`` taps (index 0 is the center)"""
    n = np.arange(length)
    n = np.where(n > length // 2, n - length, n)
    kernel = np.zeros(length)
    kernel[n == 0] = 1.0 / (4.0 * tau ** 2)
    odd = (n % 2) != 0
    kernel[odd] = -1.0 / (np.pi ** 2 * n[odd].astype(np.float64) ** 2 * tau ** 2)
    return kernel


def ramp_filter(image: np.ndarray, pitch_u: float) -> np.ndarray:
    """Filter every detector row along axis 0 (u)"""
    image = np.asarray(image, dtype=np.float64)
    nu = image.shape[0]
    padded = 1 << int(math.ceil(math.log2(2 * nu)))
    response = fft.fft(ram_lak_kernel(padded, pitch_u))
    spectrum = fft.fft(image, n=padded, axis=0) * response[:, None]
    return pitch_u * np.real(fft.ifft(spectrum, axis=0))[:nu]


def fbp(projections: Sequence[Projection], dims, spacing, workers: int = 1) -> VoxelGrid:
    """Parallel-beam FBP over views rotated about the vertical axis"""
    if not projections:
        raise GeometryError("fbp needs at least one projection")
    dims = tuple(int(d) for d in dims)
    accumulator = np.zeros(dims)
    for p in projections:
        filtered = ramp_filter(p.log_values, p.detector.pitch_u)
        weights = backproject_array(np.ones_like(filtered), p.pose, p.detector, dims, spacing, workers)
        smeared = backproject_array(filtered, p.pose, p.detector, dims, spacing, workers)
        accumulator += np.divide(smeared, weights, out=np.zeros(dims), where=weights > 0)
    accumulator *= math.pi / len(projections)
    return VoxelGrid.from_clamped(accumulator, spacing)


def fbp_two_view(p_pa: Projection, p_lat: Projection, dims, spacing, workers: int = 1) -> VoxelGrid:
    check_orthogonal_pair(p_pa.pose, p_lat.pose)
    return fbp([p_pa, p_lat], dims, spacing, workers)
