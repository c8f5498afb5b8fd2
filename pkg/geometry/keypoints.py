"""Keypoint selection (FPS, scaled bounding box) and radial dispersion."""

import itertools
import logging

import numpy as np

from core.errors import DegeneracyError, ParameterError, SizeError
from .types import KeypointSet, PointCloud, SelectionMethod, as_point

logger = logging.getLogger(__name__)


def farthest_from_centroid(cloud: PointCloud) -> int:
    distances = np.linalg.norm(cloud.points - cloud.centroid, axis=1)
    return int(np.argmax(distances))


def fps_keypoints(cloud: PointCloud, k: int, seed_index: int | None = None) -> KeypointSet:
    """Greedy farthest point sampling.

    Each new point maximises its minimum distance to the points already
    chosen; ties go to the lowest index. The default seed is the point
    farthest from the centroid.
    """
    points = cloud.points
    if k < 1:
        raise ParameterError(f"k must be positive, got {k}")
    if k > len(points):
        raise SizeError(f"Cannot select {k} keypoints from {len(points)} points")
    if seed_index is None:
        seed_index = farthest_from_centroid(cloud)
    if not 0 <= seed_index < len(points):
        raise SizeError(f"seed_index {seed_index} out of range for {len(points)} points")

    chosen = [seed_index]
    min_dist = np.linalg.norm(points - points[seed_index], axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(points - points[nxt], axis=1))

    return KeypointSet(points[chosen], SelectionMethod.FPS, 1.0, {"indices": chosen})


def bbox_corners(cloud: PointCloud, scale: float = 1.0) -> np.ndarray:
    """8 corners of the axis-aligned box, scaled about its center.

    Corner ``i`` takes the max along axis ``a`` when bit ``a`` of ``i`` is set.
    """
    if scale < 1.0:
        raise ParameterError(f"Bounding box scale must be >= 1, got {scale}")
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    if np.any(hi - lo <= 0.0):
        raise DegeneracyError(f"Point cloud has zero extent along an axis: {hi - lo}")
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0 * scale
    corners = np.empty((8, 3))
    for i in range(8):
        signs = np.array([1.0 if (i >> axis) & 1 else -1.0 for axis in range(3)])
        corners[i] = center + signs * half
    return corners


def order_corners(corners: np.ndarray, count: int = 8) -> np.ndarray:
    """Corner indices, best triplet first, then greedy max-min extension.

    The triplet maximises the smallest pairwise distance; ties keep the
    first combination in index order.
    """
    best, best_score = None, -1.0
    for combo in itertools.combinations(range(len(corners)), 3):
        pts = corners[list(combo)]
        score = min(np.linalg.norm(pts[a] - pts[b]) for a, b in ((0, 1), (0, 2), (1, 2)))
        if score > best_score + 1e-12:
            best, best_score = combo, score
    order = list(best)
    remaining = [i for i in range(len(corners)) if i not in order]
    while remaining and len(order) < count:
        dists = [min(np.linalg.norm(corners[r] - corners[o]) for o in order) for r in remaining]
        pick = remaining[int(np.argmax(dists))]
        order.append(pick)
        remaining.remove(pick)
    return np.array(order[:count], dtype=np.int64)


def bbox_keypoints(cloud: PointCloud, scale: float, count: int = 8, ordered: bool = False) -> KeypointSet:
    """Scaled bounding-box keypoints.

    All 8 corners come back in corner-index order unless ``ordered`` is set
    or fewer are requested, in which case the order is ``order_corners``.
    """
    if not 3 <= count <= 8:
        raise ParameterError(f"Bounding box keypoint count must be within 3..8, got {count}")
    corners = bbox_corners(cloud, scale)
    if count == 8 and not ordered:
        order = np.arange(8)
    else:
        order = order_corners(corners, count)
    return KeypointSet(corners[order], SelectionMethod.SCALED_BBOX, float(scale), {"corner_indices": order.tolist()})


def disperse_keypoints(
    kps: KeypointSet, centroid, target_scale: float, object_radius: float
) -> KeypointSet:
    """Move each keypoint along its centroid ray to ``target_scale * object_radius``."""
    if target_scale <= 0.0:
        raise ParameterError(f"target_scale must be positive, got {target_scale}")
    centroid = as_point(centroid)
    offsets = kps.keypoints - centroid
    norms = np.linalg.norm(offsets, axis=1)
    if np.any(norms == 0.0):
        raise DegeneracyError("A keypoint coincides with the centroid; its direction is undefined")
    directions = offsets / norms[:, None]
    moved = centroid + directions * (target_scale * object_radius)
    return KeypointSet(moved, kps.selection_method, float(target_scale), dict(kps.metadata))
