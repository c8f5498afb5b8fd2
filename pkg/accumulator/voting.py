"""Vote casting for the four schemes, single casts and whole vote maps."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from core.errors import DegeneracyError, ParameterError
from geometry.camera import valid_depth_mask
from geometry.types import CameraIntrinsics, as_point, as_points
from vote_maps.schemes import SchemeKind, VoteMap, toward_keypoint
from . import kernels
from .grid import AccumulatorGrid

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-6


@dataclass
class VoteStats:
    votes: int = 0
    dropped: int = 0
    increments: int = 0
    wall_ms: float = 0.0

    def merge(self, other: "VoteStats") -> "VoteStats":
        return VoteStats(
            self.votes + other.votes,
            self.dropped + other.dropped,
            self.increments + other.increments,
            self.wall_ms + other.wall_ms,
        )


def cast_offset_vote(grid: AccumulatorGrid, point, offset, stats: VoteStats | None = None) -> int:
    """Vote for the voxel containing point - offset (the keypoint estimate)."""
    target = as_point(point) - as_point(offset)
    hits = int(kernels.cast_points(grid.counts, grid.to_voxel_coords(target))[0])
    _record(stats, hits)
    return hits


def cast_ray_vote(grid: AccumulatorGrid, point, direction, stats: VoteStats | None = None) -> int:
    """Vote along the half-line from ``point`` in the toward-keypoint ``direction``."""
    direction = as_point(direction)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        raise DegeneracyError("Ray direction is zero")
    if abs(norm - 1.0) > UNIT_TOLERANCE:
        raise ParameterError(f"Ray direction must be unit-norm, got norm {norm}")
    origin = grid.to_voxel_coords(point)
    hits = int(kernels.cast_rays(grid.counts, origin, direction[None, :])[0])
    _record(stats, hits)
    return hits


def cast_sphere_vote(grid: AccumulatorGrid, center, radius: float, stats: VoteStats | None = None) -> int:
    """Vote on the per-slice annulus of the sphere, radius rounded to half a voxel."""
    if not radius > 0.0:
        raise ParameterError(f"Sphere radius must be positive, got {radius}")
    centers = grid.to_voxel_coords(center)
    radii = np.array([radius / grid.resolution])
    hits = int(kernels.cast_spheres(grid.counts, centers, radii)[0])
    _record(stats, hits)
    return hits


def _record(stats, hits):
    if stats is not None:
        stats.votes += 1
        stats.increments += hits
        stats.dropped += int(hits == 0)


def voting_pixels(vote_map: VoteMap, depth=None, sample: int | None = None, seed: int = 0) -> np.ndarray:
    """(v, u) of masked pixels with valid depth, optionally subsampled without replacement."""
    depth = vote_map.depth if depth is None else depth
    if depth is None:
        raise ParameterError("Vote casting needs a depth image")
    keep = vote_map.mask & valid_depth_mask(depth)
    rows, cols = np.nonzero(keep)
    if sample is not None and len(rows) > sample:
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(len(rows), size=sample, replace=False))
        rows, cols = rows[chosen], cols[chosen]
    return np.stack([rows, cols], axis=1)


def voter_geometry(vote_map: VoteMap, pixels: np.ndarray, depth=None, intrinsics: CameraIntrinsics | None = None):
    """Camera-frame points and scheme values of the voting pixels."""
    depth = np.asarray(vote_map.depth if depth is None else depth, dtype=np.float64)
    intrinsics = vote_map.intrinsics if intrinsics is None else intrinsics
    if intrinsics is None:
        raise ParameterError("Vote casting needs camera intrinsics")
    v, u = pixels[:, 0], pixels[:, 1]
    d = depth[v, u]
    points = np.stack(
        [(u - intrinsics.cx) * d / intrinsics.fx, (v - intrinsics.cy) * d / intrinsics.fy, d], axis=1
    )
    return points, vote_map.values[v, u]


def _cast_batch(counts: np.ndarray, grid: AccumulatorGrid, scheme: SchemeKind, points, values) -> np.ndarray:
    if scheme is SchemeKind.OFFSET:
        return kernels.cast_points(counts, grid.to_voxel_coords(points - values))
    if scheme is SchemeKind.RADIAL:
        radii = np.ascontiguousarray(values[:, 0] / grid.resolution)
        return kernels.cast_spheres(counts, grid.to_voxel_coords(points), radii)
    directions = np.ascontiguousarray(toward_keypoint(scheme, values))
    return kernels.cast_rays(counts, grid.to_voxel_coords(points), directions)


def cast_votes(
    grid: AccumulatorGrid,
    vote_map: VoteMap,
    depth=None,
    intrinsics: CameraIntrinsics | None = None,
    sample: int | None = None,
    seed: int = 0,
    workers: int = 1,
) -> VoteStats:
    """Cast one vote per masked, valid-depth pixel of ``vote_map`` into ``grid``.

    With ``workers > 1`` the voters are split into contiguous shards, each
    voting into a private count array on its own thread; the shards are then
    summed, so the grid is identical to a sequential run.
    """
    start = time.perf_counter()
    pixels = voting_pixels(vote_map, depth, sample, seed)
    if len(pixels) == 0:
        return VoteStats(wall_ms=(time.perf_counter() - start) * 1000.0)
    points, values = voter_geometry(vote_map, pixels, depth, intrinsics)
    points = np.ascontiguousarray(as_points(points))
    values = np.ascontiguousarray(values)
    scheme = vote_map.scheme

    if workers <= 1 or len(points) < 2 * workers:
        hits = _cast_batch(grid.counts, grid, scheme, points, values)
    else:
        bounds = np.linspace(0, len(points), workers + 1).astype(int)
        shards = [grid.empty_like().counts for _ in range(workers)]

        def run(n):
            lo, hi = bounds[n], bounds[n + 1]
            return _cast_batch(shards[n], grid, scheme, points[lo:hi], values[lo:hi])

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(workers)))
        hits = np.concatenate(parts)
        for shard in shards:
            grid.counts += shard

    stats = VoteStats(
        votes=len(hits),
        dropped=int(np.count_nonzero(hits == 0)),
        increments=int(hits.sum()),
        wall_ms=(time.perf_counter() - start) * 1000.0,
    )
    if stats.dropped:
        logger.debug(f"{stats.dropped} of {stats.votes} {scheme.value} votes fell outside the grid")
    return stats
