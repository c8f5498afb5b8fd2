"""Closed-form least-squares rigid transform between corresponded point sets."""

import numpy as np

from core.errors import SizeError
from .types import RigidTransform, as_points, check_non_collinear


def horn_solve(src, dst) -> RigidTransform:
    """Rigid transform minimising sum ||R @ src_i + t - dst_i||^2.

    Rotation from the SVD of the cross-covariance of the centred sets, with
    the sign of the last singular direction flipped when it would reflect.
    """
    src = as_points(src)
    dst = as_points(dst)
    if src.shape != dst.shape:
        raise SizeError(f"Correspondence size mismatch: {src.shape} vs {dst.shape}")
    check_non_collinear(src)

    centroid_src = src.mean(axis=0)
    centroid_dst = dst.mean(axis=0)
    H = (src - centroid_src).T @ (dst - centroid_dst)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    t = centroid_dst - R @ centroid_src
    return RigidTransform(R, t)


def residuals(transform: RigidTransform, src, dst) -> np.ndarray:
    return np.linalg.norm(transform.apply(as_points(src)) - as_points(dst), axis=1)
