"""Peak detection and accumulator merging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from core.errors import IncompatibleGridError, NoPeakError, SizeError
from .grid import COUNT_DTYPE, AccumulatorGrid


@dataclass(frozen=True, eq=False)
class PeakResult:
    location: np.ndarray
    count: int
    refined: bool
    index: tuple


def find_peak(grid: AccumulatorGrid, refine: bool = False) -> PeakResult:
    """Global maximum voxel; ties go to the smallest linear index.

    With ``refine`` the location is the count-weighted centroid of the voxel
    centers in the 3x3x3 neighbourhood (clipped to the grid).
    """
    flat = grid.counts.ravel()
    linear = int(np.argmax(flat))
    count = int(flat[linear])
    if count == 0:
        raise NoPeakError("Accumulator holds no votes")
    nx, ny, _ = grid.dims
    k, rem = divmod(linear, nx * ny)
    j, i = divmod(rem, nx)
    index = (i, j, k)
    if not refine:
        return PeakResult(grid.voxel_center(index), count, False, index)

    nz = grid.dims[2]
    ks = slice(max(k - 1, 0), min(k + 2, nz))
    js = slice(max(j - 1, 0), min(j + 2, ny))
    is_ = slice(max(i - 1, 0), min(i + 2, nx))
    weights = grid.counts[ks, js, is_].astype(np.float64)
    kk, jj, ii = np.meshgrid(
        np.arange(ks.start, ks.stop), np.arange(js.start, js.stop), np.arange(is_.start, is_.stop), indexing="ij"
    )
    total = weights.sum()
    centroid = np.array(
        [(weights * ii).sum() / total, (weights * jj).sum() / total, (weights * kk).sum() / total]
    )
    location = grid.origin + (centroid + 0.5) * grid.resolution
    return PeakResult(location, count, True, index)


def merge_grids(grids) -> AccumulatorGrid:
    """Element-wise sum of grids sharing origin, resolution and dims."""
    grids = list(grids)
    if not grids:
        raise SizeError("Nothing to merge")
    first = grids[0]
    for other in grids[1:]:
        if not first.same_geometry(other):
            raise IncompatibleGridError(
                f"Grid geometry mismatch: {first.dims}@{first.resolution} vs {other.dims}@{other.resolution}"
            )
    total = np.zeros(first.counts.shape, dtype=np.uint64)
    for g in grids:
        total += g.counts
    if total.size and total.max() > np.iinfo(COUNT_DTYPE).max:
        raise OverflowError("Merged counts exceed the count word")
    return AccumulatorGrid(first.origin.copy(), first.resolution, first.dims, total.astype(COUNT_DTYPE))
