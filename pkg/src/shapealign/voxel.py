"""Voxel occupancy grids and the calibrated volumetric IoU protocol.

A grid is a dense array of occupancy values in [0, 1], linearized x-fastest
(index = x + nx * (y + ny * z)). Before IoU scoring, every grid runs through
``prepare_iou``: optional 4x max-pooling for high resolutions, a tight
bounding box at occupancy > ``iou_bbox_threshold``, symmetric zero-padding
to a cube, and a trilinear resample to 32 cells per side. The prediction
binarization threshold is then tuned by an exhaustive sweep maximizing mean
IoU, with the ground truth fixed at 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage import measure

from .errors import EmptyGrid, EmptyInput, EmptySurface, ResolutionMismatch
from .geometry import TriangleMesh

_POOL_TRIGGER = 128
_POOL_FACTOR = 4


@dataclass(frozen=True)
class VoxelGrid:
    """Dense occupancy grid with values in [0, 1], linearized x-fastest."""

    resolution: tuple[int, int, int]
    values: np.ndarray                     # flat (nx*ny*nz,) float64

    def __post_init__(self) -> None:
        res = tuple(int(r) for r in self.resolution)
        if len(res) != 3 or any(r < 1 for r in res):
            raise ValueError(f"resolution must be 3 positive counts, got {res}")
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if vals.size != res[0] * res[1] * res[2]:
            raise ValueError(
                f"{vals.size} values for resolution {res}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid values must be finite")
        if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            raise ValueError("grid values must lie in [0, 1]")
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "VoxelGrid":
        """Build from a 3D array indexed [x, y, z]."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError("expected a 3D array")
        return cls(resolution=arr.shape, values=arr.reshape(-1, order="F"))

    def as_array(self) -> np.ndarray:
        """The grid as a 3D array indexed [x, y, z]."""
        return self.values.reshape(self.resolution, order="F")


@dataclass(frozen=True)
class MetricConfig:
    """Shared knobs for the shape-similarity metrics.

    Attributes:
        iso_value: marching-cubes surface level.
        n_samples: points sampled per cloud.
        iou_resolution: side length of the resampled IoU grids.
        iou_bbox_threshold: occupancy cut for the tight bounding box.
        threshold_sweep: (start, stop, step) of the prediction-threshold
            search, endpoints inclusive.
        emd_epsilon: relative approximation slack of the assignment solver.
        rng_seed: seed for surface sampling.
    """

    iso_value: float = 0.1
    n_samples: int = 1024
    iou_resolution: int = 32
    iou_bbox_threshold: float = 0.1
    threshold_sweep: tuple[float, float, float] = (0.01, 0.50, 0.01)
    emd_epsilon: float = 0.002
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.iso_value < 1.0:
            raise ValueError("iso_value must lie strictly inside (0, 1)")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.iou_resolution < 1:
            raise ValueError("iou_resolution must be at least 1")
        start, stop, step = self.threshold_sweep
        if step <= 0 or stop < start:
            raise ValueError("threshold_sweep must be (start, stop, step>0)")
        if self.emd_epsilon <= 0:
            raise ValueError("emd_epsilon must be positive")


@dataclass(frozen=True)
class PrepareTrace:
    """What prepare_iou actually did, for protocol-conformance checks."""

    input_resolution: tuple[int, int, int]
    pooled: bool
    pool_factor: int
    bbox_lo: tuple[int, int, int]          # inclusive, post-pool indices
    bbox_hi: tuple[int, int, int]          # inclusive
    cube_side: int
    pad_lo: tuple[int, int, int]
    output_resolution: tuple[int, int, int]


def marching_cubes(grid: VoxelGrid, iso: float) -> TriangleMesh:
    """Extract the iso-surface of a grid as a triangle mesh.

    Vertices live in cell-index coordinates (unit cell spacing) and sit on
    cell edges by linear interpolation. The mesh is watertight whenever the
    surface does not touch the grid boundary.

    Raises:
        EmptySurface: every value is on one side of ``iso``.
    """
    if not 0.0 < iso < 1.0:
        raise ValueError(f"iso must lie strictly inside (0, 1), got {iso}")
    arr = grid.as_array()
    if arr.min() >= iso or arr.max() < iso:
        raise EmptySurface(
            f"no iso-crossing: grid range [{arr.min()}, {arr.max()}], "
            f"iso {iso}")
    verts, faces, _, _ = measure.marching_cubes(arr, level=iso,
                                                method="lewiner")
    keep = ((faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
            & (faces[:, 0] != faces[:, 2]))
    return TriangleMesh(np.asarray(verts, dtype=np.float64),
                        np.asarray(faces[keep], dtype=np.int64))


def _max_pool(arr: np.ndarray, factor: int) -> np.ndarray:
    padded_shape = [int(np.ceil(s / factor)) * factor for s in arr.shape]
    if tuple(padded_shape) != arr.shape:
        padded = np.zeros(padded_shape, dtype=arr.dtype)
        padded[:arr.shape[0], :arr.shape[1], :arr.shape[2]] = arr
        arr = padded
    nx, ny, nz = (s // factor for s in arr.shape)
    return arr.reshape(nx, factor, ny, factor, nz, factor).max(axis=(1, 3, 5))


def prepare_iou_traced(grid: VoxelGrid,
                       config: MetricConfig) -> tuple[VoxelGrid, PrepareTrace]:
    """Run the IoU preprocessing pipeline and report each step taken.

    Steps: 4x max-pool when any input side is >= 128; tight bounding box of
    cells strictly above ``iou_bbox_threshold``; zero-padding to a cube with
    the box centered (odd remainder on the high side); trilinear resample to
    ``iou_resolution`` per side with border clamping.

    Raises:
        EmptyGrid: nothing above the bounding-box threshold.
    """
    arr = grid.as_array()
    pooled = max(grid.resolution) >= _POOL_TRIGGER
    if pooled:
        arr = _max_pool(arr, _POOL_FACTOR)

    occupied = np.argwhere(arr > config.iou_bbox_threshold)
    if occupied.size == 0:
        raise EmptyGrid(
            f"no cells above threshold {config.iou_bbox_threshold}")
    lo = occupied.min(axis=0)
    hi = occupied.max(axis=0)
    size = hi - lo + 1
    side = int(size.max())

    pad_lo = (side - size) // 2
    cube = np.zeros((side, side, side), dtype=np.float64)
    # Overlap of the centered cube window with the pooled array.
    src_lo = lo - pad_lo
    copy_lo = np.maximum(src_lo, 0)
    copy_hi = np.minimum(src_lo + side, arr.shape)
    dst_lo = copy_lo - src_lo
    dst_hi = dst_lo + (copy_hi - copy_lo)
    cube[dst_lo[0]:dst_hi[0], dst_lo[1]:dst_hi[1], dst_lo[2]:dst_hi[2]] = \
        arr[copy_lo[0]:copy_hi[0], copy_lo[1]:copy_hi[1], copy_lo[2]:copy_hi[2]]

    out = config.iou_resolution
    # Output cell centers mapped affinely into the cube's cell-center frame.
    centers = (np.arange(out) + 0.5) * side / out - 0.5
    coords = np.stack(np.meshgrid(centers, centers, centers, indexing="ij"))
    resampled = ndimage.map_coordinates(cube, coords, order=1, mode="nearest")

    trace = PrepareTrace(
        input_resolution=grid.resolution, pooled=pooled,
        pool_factor=_POOL_FACTOR if pooled else 1,
        bbox_lo=tuple(int(v) for v in lo), bbox_hi=tuple(int(v) for v in hi),
        cube_side=side, pad_lo=tuple(int(v) for v in pad_lo),
        output_resolution=(out, out, out))
    return VoxelGrid.from_array(resampled), trace


def prepare_iou(grid: VoxelGrid, config: MetricConfig) -> VoxelGrid:
    """Preprocess a grid for IoU scoring (see prepare_iou_traced)."""
    return prepare_iou_traced(grid, config)[0]


def _binary_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / union


def iou(a: VoxelGrid, b: VoxelGrid, threshold: float) -> float:
    """Intersection over union after binarizing both grids at >= threshold.

    Both grids empty after binarization scores 0.0.

    Raises:
        ResolutionMismatch: differing grid resolutions.
    """
    if a.resolution != b.resolution:
        raise ResolutionMismatch(
            f"{a.resolution} vs {b.resolution}")
    return _binary_iou(a.values >= threshold, b.values >= threshold)


def sweep_thresholds(config: MetricConfig) -> np.ndarray:
    """The exact threshold values searched by best_threshold."""
    start, stop, step = config.threshold_sweep
    count = int(round((stop - start) / step)) + 1
    return np.round(start + step * np.arange(count), 12)


# Ground truth binarizes at fixed occupancy 0.5; the sweep tunes only the
# prediction threshold.
GT_THRESHOLD = 0.5


def best_threshold(pairs: list[tuple[VoxelGrid, VoxelGrid]],
                   config: MetricConfig) -> tuple[float, float]:
    """Search the sweep for the prediction threshold maximizing mean IoU.

    Args:
        pairs: (prediction, ground truth) grids, already prepared.

    Returns:
        (threshold, mean IoU) at the argmax; ties break to the lowest
        threshold.

    Raises:
        EmptyInput: no pairs.
        ResolutionMismatch: a pair with differing resolutions.
    """
    if not pairs:
        raise EmptyInput("at least one (prediction, ground truth) pair needed")
    for pred, gt in pairs:
        if pred.resolution != gt.resolution:
            raise ResolutionMismatch(f"{pred.resolution} vs {gt.resolution}")
    gt_bits = [gt.values >= GT_THRESHOLD for _, gt in pairs]
    best_t, best_mean = None, -1.0
    for t in sweep_thresholds(config):
        total = 0.0
        for (pred, _), gbits in zip(pairs, gt_bits):
            total += _binary_iou(pred.values >= t, gbits)
        mean = total / len(pairs)
        if mean > best_mean:
            best_t, best_mean = float(t), mean
    return best_t, best_mean
