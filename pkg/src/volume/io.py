"""
SPVOL v1 volume files and PNG previews

Layout::

    SPVOL 1
    dims nx ny nz
    spacing sx sy sz
    dtype f32|u16
    <empty line>
    <little-endian payload, nx*ny*nz elements, x fastest>
"""
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image

from src.core.exceptions import (
    DimensionMismatchError,
    MalformedHeaderError,
    PayloadMismatchError,
    UnsupportedVersionError,
    ValidationError,
)
from src.volume.grid import LabelGrid, VoxelGrid

MAGIC = "SPVOL"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "u16": np.dtype("<u2")}


def write_spvol(path: Path | str, array: np.ndarray, spacing, dtype: str) -> None:
    """Write a 3D array; 2D arrays are stored with nz = 1"""
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    array = np.asarray(array)
    if array.ndim == 2:
        array = array[:, :, np.newaxis]
    if array.ndim != 3:
        raise ValidationError(f"SPVOL stores 2D or 3D arrays, got shape {array.shape}")
    sx, sy, sz = (float(s) for s in spacing)
    nx, ny, nz = array.shape
    header = f"{MAGIC} {VERSION}\ndims {nx} {ny} {nz}\nspacing {sx!r} {sy!r} {sz!r}\ndtype {dtype}\n\n"
    payload = array.astype(_DTYPES[dtype]).tobytes(order="F")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header.encode("ascii") + payload)


def read_spvol(path: Path | str) -> Tuple[np.ndarray, Tuple[float, float, float], str]:
    """Return (array of shape (nx, ny, nz), spacing, dtype tag)"""
    raw = Path(path).read_bytes()
    lines = []
    cursor = 0
    for _ in range(5):
        end = raw.find(b"\n", cursor)
        if end < 0:
            raise MalformedHeaderError(f"{path}: header ends after {len(lines)} lines")
        lines.append(raw[cursor:end])
        cursor = end + 1
    try:
        magic, version, dims_line, spacing_line, dtype_line, blank = (
            *lines[0].decode("ascii").split(), *(line.decode("ascii") for line in lines[1:])
        )
    except (UnicodeDecodeError, ValueError) as e:
        raise MalformedHeaderError(f"{path}: unreadable header") from e

    if magic != MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if version != str(VERSION):
        raise UnsupportedVersionError(f"{path}: SPVOL version {version} is not supported")
    dims = _header_fields(path, dims_line, "dims", int)
    spacing = _header_fields(path, spacing_line, "spacing", float)
    dtype_fields = dtype_line.split()
    if len(dtype_fields) != 2 or dtype_fields[0] != "dtype" or dtype_fields[1] not in _DTYPES:
        raise MalformedHeaderError(f"{path}: bad dtype line {dtype_line!r}")
    if blank.strip():
        raise MalformedHeaderError(f"{path}: expected an empty line before the payload")
    if min(dims) < 1:
        raise MalformedHeaderError(f"{path}: non-positive dims {dims}")

    tag = dtype_fields[1]
    dtype = _DTYPES[tag]
    payload = raw[cursor:]
    if len(payload) % dtype.itemsize:
        raise PayloadMismatchError(f"{path}: payload of {len(payload)} bytes is not whole {tag} elements")
    count = len(payload) // dtype.itemsize
    expected = dims[0] * dims[1] * dims[2]
    if count != expected:
        raise DimensionMismatchError(f"{path}: header dims {dims} need {expected} elements, payload has {count}")
    array = np.frombuffer(payload, dtype=dtype).reshape(dims, order="F")
    return array, spacing, tag


def _header_fields(path, line: str, key: str, cast):
    fields = line.split()
    if len(fields) != 4 or fields[0] != key:
        raise MalformedHeaderError(f"{path}: bad {key} line {line!r}")
    try:
        return tuple(cast(v) for v in fields[1:])
    except ValueError as e:
        raise MalformedHeaderError(f"{path}: bad {key} values {line!r}") from e


def save_volume(path: Path | str, grid: Union[VoxelGrid, LabelGrid]) -> None:
    if isinstance(grid, LabelGrid):
        write_spvol(path, grid.labels, grid.spacing, "u16")
    else:
        write_spvol(path, grid.values, grid.spacing, "f32")


def load_volume(path: Path | str, class_count: int | None = None) -> Union[VoxelGrid, LabelGrid]:
    """f32 payloads load as VoxelGrid, u16 payloads as LabelGrid"""
    array, spacing, tag = read_spvol(path)
    if tag == "u16":
        count = class_count if class_count is not None else max(1, int(array.max()) if array.size else 1)
        return LabelGrid(array.copy(), count, spacing)
    return VoxelGrid(array.copy(), spacing)


def minmax_uint8(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if hi <= lo:
        return np.zeros(image.shape, dtype=np.uint8)
    return np.round((image - lo) / (hi - lo) * 255.0).astype(np.uint8)


def save_png(path: Path | str, image: np.ndarray) -> None:
    """8-bit grayscale, per-image min-max scaled; rows are the second array axis"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(minmax_uint8(np.asarray(image).T[::-1]))).save(path)
