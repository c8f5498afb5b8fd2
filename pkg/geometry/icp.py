"""Point-to-point ICP refinement of a model pose against observed scene points."""

import logging

import numpy as np
from scipy.spatial import cKDTree

from core.errors import RankError, SizeError
from .horn import horn_solve
from .types import PointCloud, RigidTransform

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION_MM = 5.0


def _correspond(tree, scene_points, pose, gate):
    """Gated nearest-model-point correspondences for each scene point."""
    in_object = pose.inverse().apply(scene_points)
    distances, indices = tree.query(in_object, distance_upper_bound=gate)
    valid = np.isfinite(distances)
    return distances[valid], indices[valid], valid


def icp_refine(
    model: PointCloud,
    scene: PointCloud,
    init: RigidTransform,
    max_iters: int = 30,
    tol: float = 1e-4,
    max_correspondence_mm: float | None = None,
    resolution_mm: float = DEFAULT_RESOLUTION_MM,
) -> RigidTransform:
    """Refine ``init`` (object -> camera) so the model fits the scene points.

    Scene points are matched to their nearest model point; pairs farther apart
    than the gate (default twice the voxel resolution) are ignored. Stops when
    the mean residual changes by less than ``tol`` mm. The returned pose is the
    lowest-residual pose seen, so refinement never ends worse than it started.
    """
    if len(model) == 0 or len(scene) == 0:
        raise SizeError("ICP needs non-empty model and scene clouds")
    gate = max_correspondence_mm if max_correspondence_mm is not None else 2.0 * resolution_mm

    tree = cKDTree(model.points)
    pose = init
    best_pose, best_error = init, np.inf
    prev_error = None
    for iteration in range(max_iters + 1):
        distances, indices, valid = _correspond(tree, scene.points, pose, gate)
        if len(distances) < 3:
            logger.warning(f"ICP stopped at iteration {iteration}: only {len(distances)} correspondences within {gate} mm")
            break
        mean_error = float(np.mean(distances))
        if mean_error < best_error:
            best_pose, best_error = pose, mean_error
        if prev_error is not None and abs(prev_error - mean_error) < tol:
            break
        if iteration == max_iters:
            break
        prev_error = mean_error
        try:
            pose = horn_solve(model.points[indices], scene.points[valid])
        except RankError:
            logger.warning(f"ICP stopped at iteration {iteration}: degenerate correspondences")
            break

    logger.debug(f"ICP finished with mean residual {best_error:.4f} mm")
    return best_pose


def mean_residual(model: PointCloud, scene: PointCloud, pose: RigidTransform, gate: float = np.inf) -> float:
    """Mean scene-to-model nearest distance under ``pose`` (gated pairs only)."""
    tree = cKDTree(model.points)
    distances, _, _ = _correspond(tree, scene.points, pose, gate)
    return float(np.mean(distances)) if len(distances) else float("inf")
