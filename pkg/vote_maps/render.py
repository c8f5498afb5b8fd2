"""Ground-truth vote maps from a z-buffered point rendering of the model."""

import logging

import numpy as np

from core.errors import EmptyRenderError
from geometry.camera import backproject_depth, project_points
from geometry.types import CameraIntrinsics, KeypointSet, PointCloud, RigidTransform
from .schemes import SchemeKind, VoteMap, scheme_values

logger = logging.getLogger(__name__)


def render_depth(model: PointCloud, pose: RigidTransform, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Depth image (mm, 0 = empty) with the nearest model point per pixel."""
    camera_points = pose.apply(model.points)
    uv = project_points(camera_points, intrinsics)
    u = np.floor(uv[:, 0] + 0.5)
    v = np.floor(uv[:, 1] + 0.5)
    visible = (
        np.isfinite(u)
        & np.isfinite(v)
        & (u >= 0)
        & (u < intrinsics.width)
        & (v >= 0)
        & (v < intrinsics.height)
    )
    u = u[visible].astype(np.int64)
    v = v[visible].astype(np.int64)
    z = camera_points[visible, 2]

    depth = np.zeros((intrinsics.height, intrinsics.width))
    if len(z) == 0:
        return depth
    linear = v * intrinsics.width + u
    order = np.lexsort((z, linear))
    linear_sorted = linear[order]
    _, first = np.unique(linear_sorted, return_index=True)
    nearest = order[first]
    depth[v[nearest], u[nearest]] = z[nearest]
    return depth


def generate_gt_maps(
    model: PointCloud,
    pose: RigidTransform,
    keypoints: KeypointSet,
    intrinsics: CameraIntrinsics,
    scheme: SchemeKind,
    background_depth: float | None = None,
) -> list[VoteMap]:
    """One ground-truth map per keypoint, all sharing the same mask and depth.

    Values are computed from the back-projected pixel, not from the model
    point that produced it. ``background_depth`` fills unmasked pixels with a
    flat plane so that mask flips land on valid depth.
    """
    scheme = SchemeKind.parse(scheme)
    depth = render_depth(model, pose, intrinsics)
    mask = depth > 0.0
    if not mask.any():
        raise EmptyRenderError("No model point projects into the image")

    points, pixels = backproject_depth(depth, intrinsics, mask)
    if background_depth is not None:
        depth = np.where(mask, depth, float(background_depth))
    depth.setflags(write=False)
    mask.setflags(write=False)

    camera_keypoints = pose.apply(keypoints.keypoints)
    maps = []
    for keypoint in camera_keypoints:
        values = np.zeros((intrinsics.height, intrinsics.width, scheme.channel_depth))
        values[pixels[:, 1], pixels[:, 0]] = scheme_values(scheme, points - keypoint)
        maps.append(VoteMap(scheme, values, mask, depth, intrinsics, keypoint))
    logger.debug(f"Rendered {int(mask.sum())} masked pixels for {len(maps)} {scheme.value} maps")
    return maps
