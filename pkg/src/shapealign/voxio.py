"""File formats for voxel grids and point clouds.

Native grid format (read/write): 16-byte header of magic ``VOXF`` plus
nx, ny, nz as little-endian unsigned 32-bit counts, followed by
nx*ny*nz little-endian float32 values linearized x-fastest, matching
``VoxelGrid.values`` exactly.

Community binvox format (read-only): ASCII header (#binvox 1, dim,
optional translate/scale, data) followed by run-length encoded bytes in
(value, count) pairs; voxels are ordered y-fastest, then z, then x.

Point clouds are whitespace-separated XYZ text, one point per line.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .pointcloud import PointCloud
from .voxel import VoxelGrid

_MAGIC = b"VOXF"


def write_voxf(path: str | Path, grid: VoxelGrid) -> None:
    """Write a grid in the native VOXF format."""
    nx, ny, nz = grid.resolution
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", nx, ny, nz))
        fh.write(grid.values.astype("<f4").tobytes())


def read_voxf(path: str | Path) -> VoxelGrid:
    """Read a native VOXF grid.

    Raises:
        ParseError: bad magic, truncated header, or wrong payload size.
    """
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise ParseError(f"{path}: truncated header ({len(data)} bytes)")
    if data[:4] != _MAGIC:
        raise ParseError(f"{path}: bad magic {data[:4]!r}")
    nx, ny, nz = struct.unpack("<III", data[4:16])
    expected = 16 + 4 * nx * ny * nz
    if len(data) != expected:
        raise ParseError(
            f"{path}: expected {expected} bytes for {nx}x{ny}x{nz}, "
            f"got {len(data)}")
    values = np.frombuffer(data[16:], dtype="<f4").astype(np.float64)
    return VoxelGrid(resolution=(nx, ny, nz), values=values)


def read_binvox(path: str | Path) -> VoxelGrid:
    """Read a binvox occupancy file (values become 0.0 / 1.0).

    Raises:
        ParseError: malformed header or run-length payload.
    """
    data = Path(path).read_bytes()
    try:
        header_end = data.index(b"data\n") + len(b"data\n")
    except ValueError:
        raise ParseError(f"{path}: missing 'data' section") from None
    header = data[:header_end].decode("ascii", errors="replace").splitlines()
    if not header or not header[0].startswith("#binvox"):
        raise ParseError(f"{path}: missing #binvox signature")
    dims: tuple[int, int, int] | None = None
    for line in header[1:]:
        parts = line.split()
        if parts and parts[0] == "dim":
            if len(parts) != 4:
                raise ParseError(f"{path}: malformed dim line {line!r}")
            dims = (int(parts[1]), int(parts[2]), int(parts[3]))
    if dims is None:
        raise ParseError(f"{path}: no dim line in header")

    pairs = np.frombuffer(data[header_end:], dtype=np.uint8)
    if len(pairs) % 2 != 0:
        raise ParseError(f"{path}: odd run-length payload")
    values = pairs[0::2]
    counts = pairs[1::2]
    flat = np.repeat(values.astype(np.float64), counts)
    total = dims[0] * dims[1] * dims[2]
    if flat.size != total:
        raise ParseError(
            f"{path}: run-length data covers {flat.size} voxels, "
            f"expected {total}")
    # binvox stores y fastest, then z, then x; reorder to [x, y, z].
    arr = flat.reshape(dims[0], dims[2], dims[1]).transpose(0, 2, 1)
    return VoxelGrid.from_array(np.clip(arr, 0.0, 1.0))


def write_xyz(path: str | Path, cloud: PointCloud) -> None:
    """Write a cloud as one whitespace-separated XYZ triple per line."""
    with open(path, "w") as fh:
        for x, y, z in cloud.points:
            # builtin float repr is the shortest exact representation
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def read_xyz(path: str | Path) -> PointCloud:
    """Read a whitespace-separated XYZ point cloud.

    Raises:
        ParseError: a line without exactly three numeric fields.
    """
    points = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split()
            if len(parts) != 3:
                raise ParseError(
                    f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                points.append([float(p) for p in parts])
            except ValueError:
                raise ParseError(
                    f"{path}:{lineno}: non-numeric field in {stripped!r}"
                ) from None
    if not points:
        raise ParseError(f"{path}: no points")
    return PointCloud(np.array(points))
