"""Keypoint localization by voting, and pose recovery from the located keypoints."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from accumulator.grid import AccumulatorGrid, build_grid
from accumulator.peaks import PeakResult, find_peak
from accumulator.voting import VoteStats, cast_votes, voter_geometry, voting_pixels
from core.errors import ParameterError, SizeError
from geometry.horn import horn_solve
from geometry.icp import icp_refine
from geometry.types import DepthFrame, KeypointSet, PointCloud, RigidTransform, as_points
from vote_maps.schemes import SchemeKind, VoteMap

logger = logging.getLogger(__name__)

MIN_POSE_KEYPOINTS = 3
MB = 1024 * 1024


@dataclass
class PoseEstimate:
    pose: RigidTransform
    per_keypoint_error: list
    scheme: SchemeKind | str
    refined_with_icp: bool = False

    def __post_init__(self):
        errors = [float(e) for e in self.per_keypoint_error]
        if any(e < 0.0 for e in errors):
            raise ValueError("Keypoint errors must be non-negative")
        self.per_keypoint_error = errors


@dataclass
class Localization:
    """Voting outcome for one keypoint; ``extent_mm`` is the longest side the grid was asked to span."""

    peak: PeakResult
    stats: VoteStats
    mem_bytes: int
    extent_mm: float | None = None

    @property
    def location(self) -> np.ndarray:
        return self.peak.location


@dataclass
class KeypointEstimates:
    keypoints: np.ndarray
    localizations: list = field(default_factory=list)

    @property
    def stats(self) -> VoteStats:
        total = VoteStats()
        for item in self.localizations:
            total = total.merge(item.stats)
        return total

    @property
    def mem_bytes(self) -> int:
        return max((item.mem_bytes for item in self.localizations), default=0)


def voter_points(vote_map: VoteMap, depth=None, intrinsics=None, sample=None, seed: int = 0) -> np.ndarray:
    pixels = voting_pixels(vote_map, depth, sample, seed)
    if len(pixels) == 0:
        raise SizeError(f"{vote_map.scheme.value} map has no voting pixels")
    points, _ = voter_geometry(vote_map, pixels, depth, intrinsics)
    return points


def default_padding(vote_map: VoteMap, points: np.ndarray, values: np.ndarray) -> float:
    """How far votes can land outside the voters' bounding box, from the votes alone.

    Offsets and radii bound it directly. Rays are unbounded, so ray schemes
    use the voters' bounding-box diagonal. The map's ground-truth keypoint is
    never consulted.
    """
    scheme = vote_map.scheme
    if scheme is SchemeKind.RADIAL:
        return float(values[:, 0].max())
    if scheme is SchemeKind.OFFSET:
        return float(np.linalg.norm(values, axis=1).max())
    return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))


def oracle_padding(maps, depth=None, intrinsics=None, margin: float = 0.0) -> float:
    """Largest voter-to-ground-truth-keypoint distance over ``maps``, plus ``margin``.

    This reads the true keypoint, so it is only for benchmarks, where every
    scheme of a trial must share one grid sized to the true radius. It is the
    noiseless maximum sphere radius, so ray and offset grids get the same
    extent as radial ones. Inference without ground truth uses
    ``default_padding``.
    """
    padding = 0.0
    for vote_map in maps:
        if vote_map.keypoint is None:
            raise ParameterError("Oracle padding needs maps that carry their keypoint")
        points = voter_points(vote_map, depth, intrinsics)
        padding = max(padding, float(np.linalg.norm(points - vote_map.keypoint, axis=1).max()))
    return padding + margin


def _voter_box(vote_map: VoteMap, resolution: float, padding, depth, intrinsics) -> tuple:
    pixels = voting_pixels(vote_map, depth)
    if len(pixels) == 0:
        raise SizeError(f"{vote_map.scheme.value} map has no voting pixels")
    points, values = voter_geometry(vote_map, pixels, depth, intrinsics)
    if padding is None:
        padding = default_padding(vote_map, points, values) + 2.0 * resolution
    return np.vstack([points.min(axis=0), points.max(axis=0)]), float(padding)


def _box_grid(box: np.ndarray, padding: float, resolution: float, cubic: bool, max_grid_mb) -> AccumulatorGrid:
    if max_grid_mb is not None:
        extent = box[1] - box[0] + 2.0 * padding
        if cubic:
            extent = np.full(3, extent.max())
        dims = np.maximum(1, np.ceil(extent / resolution - 1e-9))
        needed = 4.0 * float(np.prod(dims)) / MB
        if needed > max_grid_mb:
            raise ParameterError(
                f"Accumulator at {resolution} mm needs {needed:.1f} MB, above the {max_grid_mb} MB limit"
            )
    return build_grid(box, padding, resolution, cubic=cubic)


def grid_for_map(
    vote_map: VoteMap,
    resolution: float,
    padding: float | None = None,
    depth=None,
    intrinsics=None,
    max_grid_mb: float | None = None,
    cubic: bool = False,
) -> AccumulatorGrid:
    box, padding = _voter_box(vote_map, resolution, padding, depth, intrinsics)
    return _box_grid(box, padding, resolution, cubic, max_grid_mb)


def localize_keypoint(
    vote_map: VoteMap,
    resolution: float,
    padding: float | None = None,
    depth=None,
    intrinsics=None,
    sample: int | None = None,
    seed: int = 0,
    workers: int = 1,
    refine: bool = False,
    max_grid_mb: float | None = None,
    cubic: bool = False,
) -> Localization:
    """Build a grid for one map, cast its votes and return the peak."""
    box, padding = _voter_box(vote_map, resolution, padding, depth, intrinsics)
    grid = _box_grid(box, padding, resolution, cubic, max_grid_mb)
    stats = cast_votes(grid, vote_map, depth, intrinsics, sample=sample, seed=seed, workers=workers)
    peak = find_peak(grid, refine=refine)
    extent = float(np.max(box[1] - box[0])) + 2.0 * padding
    return Localization(peak, stats, grid.memory_bytes, extent)


def estimate_keypoints(
    frame: DepthFrame | None,
    maps,
    resolution: float,
    padding: float | None = None,
    sample: int | None = None,
    seed: int = 0,
    workers: int = 1,
    refine: bool = False,
    max_grid_mb: float | None = None,
) -> KeypointEstimates:
    """Camera-frame estimate for each map's keypoint, voted independently.

    ``frame`` overrides the depth and intrinsics carried by the maps.
    """
    maps = list(maps)
    if len(maps) < MIN_POSE_KEYPOINTS:
        raise SizeError(f"At least {MIN_POSE_KEYPOINTS} vote maps are required, got {len(maps)}")
    depth = frame.depth if frame is not None else None
    intrinsics = frame.intrinsics if frame is not None else None
    found = [
        localize_keypoint(m, resolution, padding, depth, intrinsics, sample, seed + j, workers, refine, max_grid_mb)
        for j, m in enumerate(maps)
    ]
    logger.debug(f"Located {len(found)} {maps[0].scheme.value} keypoints at {resolution} mm")
    return KeypointEstimates(np.array([f.location for f in found]), found)


def keypoint_errors(estimated, truth) -> np.ndarray:
    estimated = as_points(estimated)
    truth = as_points(truth)
    if estimated.shape != truth.shape:
        raise SizeError(f"Estimated {estimated.shape} and true {truth.shape} keypoints differ in count")
    return np.linalg.norm(estimated - truth, axis=1)


def recover_pose(object_keypoints: KeypointSet, estimated) -> RigidTransform:
    """Object-to-camera transform from index-matched keypoints."""
    object_keypoints.require_pose_ready()
    return horn_solve(object_keypoints.keypoints, estimated)


def refine_pose(model: PointCloud, scene_points, pose: RigidTransform, resolution: float) -> RigidTransform:
    return icp_refine(model, PointCloud(as_points(scene_points)), pose, resolution_mm=resolution)
