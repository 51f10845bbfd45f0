"""
Reconstruction metrics and mesh export
"""
from .mesh import SurfaceMesh, laplacian_smooth, marching_cubes, mask_mesh, save_obj
from .metrics import MetricsReport, dice_metric, evaluate_pair, psnr, ssim
from .surfaces import chamfer, hd95

__all__ = [
    "psnr",
    "ssim",
    "dice_metric",
    "hd95",
    "chamfer",
    "MetricsReport",
    "evaluate_pair",
    "SurfaceMesh",
    "marching_cubes",
    "mask_mesh",
    "laplacian_smooth",
    "save_obj",
]
