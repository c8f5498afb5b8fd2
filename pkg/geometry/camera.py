"""Pinhole projection between camera-frame points and depth pixels."""

import math

import numpy as np

from core.errors import InvalidDepthError
from .types import CameraIntrinsics, Pixel, as_point, as_points


def backproject(pixel: Pixel, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Camera-frame point (mm) seen at ``pixel`` with its depth."""
    depth = float(pixel.depth)
    if not math.isfinite(depth) or depth <= 0.0:
        raise InvalidDepthError(f"Invalid depth {pixel.depth} at pixel ({pixel.u}, {pixel.v})")
    x = (pixel.u - intrinsics.cx) * depth / intrinsics.fx
    y = (pixel.v - intrinsics.cy) * depth / intrinsics.fy
    return np.array([x, y, depth])


def project(point, intrinsics: CameraIntrinsics) -> tuple[float, float]:
    """Sub-pixel image coordinates (u, v) of a camera-frame point."""
    x, y, z = as_point(point)
    if z <= 0.0:
        raise InvalidDepthError(f"Point behind the camera (z={z})")
    return intrinsics.fx * x / z + intrinsics.cx, intrinsics.fy * y / z + intrinsics.cy


def project_points(points, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Vectorised ``project``; rows with z <= 0 come back as NaN."""
    points = as_points(points)
    z = points[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * points[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * points[:, 1] / z + intrinsics.cy
    uv = np.stack([u, v], axis=1)
    uv[z <= 0.0] = np.nan
    return uv


def valid_depth_mask(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    return np.isfinite(depth) & (depth > 0.0)


def backproject_depth(depth: np.ndarray, intrinsics: CameraIntrinsics, mask: np.ndarray | None = None):
    """Back-project every valid (and masked) pixel of a depth image.

    Returns ``(points, pixels)``: an (N, 3) array in mm and the matching
    (N, 2) integer array of (u, v) image coordinates, in row-major pixel order.
    """
    depth = np.asarray(depth, dtype=np.float64)
    keep = valid_depth_mask(depth)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    v, u = np.nonzero(keep)
    d = depth[v, u]
    x = (u - intrinsics.cx) * d / intrinsics.fx
    y = (v - intrinsics.cy) * d / intrinsics.fy
    return np.stack([x, y, d], axis=1), np.stack([u, v], axis=1)
