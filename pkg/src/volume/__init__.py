"""
Volumetric grids, phantoms and SPVOL file I/O
"""
from .grid import LabelGrid, VoxelGrid, normalized_coord, nearest_voxel, voxel_centers
from .io import load_volume, save_volume
from .phantom import DatasetSplit, PhantomSpec, Primitive, generate_phantom

__all__ = [
    "VoxelGrid",
    "LabelGrid",
    "normalized_coord",
    "nearest_voxel",
    "voxel_centers",
    "load_volume",
    "save_volume",
    "PhantomSpec",
    "Primitive",
    "DatasetSplit",
    "generate_phantom",
]
