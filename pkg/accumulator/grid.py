"""Dense voxel accumulator over the camera frame."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from core.errors import ParameterError, SizeError
from geometry.types import PointCloud, as_point, as_points

COUNT_DTYPE = np.uint32
COUNT_BYTES = np.dtype(COUNT_DTYPE).itemsize
# extent / resolution values this close below an integer are taken as that integer
CEIL_SLACK = 1e-9


def voxels_along(extent: float, resolution: float) -> int:
    return max(1, math.ceil(extent / resolution - CEIL_SLACK))


def memory_for_extent(extent_mm: float, resolution: float) -> int:
    """Bytes for a cubic accumulator spanning ``extent_mm`` per axis."""
    return COUNT_BYTES * voxels_along(extent_mm, resolution) ** 3


@dataclass(eq=False)
class AccumulatorGrid:
    """Voxel counts stored as a (nz, ny, nx) array, so x varies fastest.

    Voxel (i, j, k) covers origin + resolution * [i, i+1) x [j, j+1) x [k, k+1).
    """

    origin: np.ndarray
    resolution: float
    dims: tuple
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        self.origin = as_point(self.origin)
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise ParameterError(f"Resolution must be positive, got {self.resolution}")
        self.dims = tuple(int(n) for n in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise SizeError(f"Grid dims must be three positive counts, got {self.dims}")
        nx, ny, nz = self.dims
        if self.counts is None:
            self.counts = np.zeros((nz, ny, nx), dtype=COUNT_DTYPE)
        elif self.counts.shape != (nz, ny, nx):
            raise SizeError(f"Counts shape {self.counts.shape} does not match dims {self.dims}")

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def memory_bytes(self) -> int:
        return self.voxel_count * COUNT_BYTES

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.resolution * np.asarray(self.dims, dtype=np.float64)

    @property
    def total(self) -> int:
        return int(self.counts.sum(dtype=np.uint64))

    def empty_like(self) -> "AccumulatorGrid":
        return AccumulatorGrid(self.origin.copy(), self.resolution, self.dims)

    def copy(self) -> "AccumulatorGrid":
        return AccumulatorGrid(self.origin.copy(), self.resolution, self.dims, self.counts.copy())

    def same_geometry(self, other: "AccumulatorGrid") -> bool:
        return (
            self.dims == other.dims
            and self.resolution == other.resolution
            and np.array_equal(self.origin, other.origin)
        )

    def to_voxel_coords(self, points) -> np.ndarray:
        """Continuous voxel coordinates; voxel centers sit at index + 0.5."""
        return (as_points(points) - self.origin) / self.resolution

    def voxel_index(self, point) -> tuple | None:
        """(i, j, k) of the voxel containing ``point``, or None outside the grid.

        Points exactly on the upper face belong to the last voxel.
        """
        coords = self.to_voxel_coords(point)[0]
        index = []
        for axis, n in enumerate(self.dims):
            c = coords[axis]
            if c < 0.0 or c > n:
                return None
            index.append(min(int(math.floor(c)), n - 1))
        return tuple(index)

    def voxel_center(self, index) -> np.ndarray:
        return self.origin + (np.asarray(index, dtype=np.float64) + 0.5) * self.resolution

    def linear_index(self, index) -> int:
        i, j, k = index
        nx, ny, _ = self.dims
        return i + nx * (j + ny * k)

    def count_at(self, index) -> int:
        i, j, k = index
        return int(self.counts[k, j, i])


def build_grid(scene_points, max_radius: float, resolution: float, cubic: bool = False) -> AccumulatorGrid:
    """Grid over the scene bounding box padded by ``max_radius`` on every side.

    A cubic grid takes the longest padded side on every axis, centred on the
    box, so its memory is ``memory_for_extent`` of that side.
    """
    points = scene_points.points if isinstance(scene_points, PointCloud) else as_points(scene_points)
    if len(points) == 0:
        raise SizeError("Cannot build an accumulator over an empty point cloud")
    if not resolution > 0:
        raise ParameterError(f"Resolution must be positive, got {resolution}")
    if max_radius < 0:
        raise ParameterError(f"Padding radius must be non-negative, got {max_radius}")
    lo = points.min(axis=0) - max_radius
    extent = points.max(axis=0) - points.min(axis=0) + 2.0 * max_radius
    if cubic:
        lo = lo + 0.5 * (extent - extent.max())
        extent = np.full(3, extent.max())
    dims = tuple(voxels_along(e, resolution) for e in extent)
    return AccumulatorGrid(lo, float(resolution), dims)
