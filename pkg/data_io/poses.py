"""Pose files: one line per pose, ``object_id`` followed by 12 numbers (row-major [R|t])."""

import numpy as np

from core.errors import GeometryError, PoseFileError
from geometry.types import ORTHONORMAL_TOLERANCE, RigidTransform

VALUES_PER_POSE = 12
# Rotations stored with few digits are snapped back onto SO(3) when this close.
SNAP_TOLERANCE = 1e-4


def _snap_rotation(rotation: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(rotation)):
        return rotation
    deviation = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
    if deviation <= ORTHONORMAL_TOLERANCE or deviation > SNAP_TOLERANCE:
        return rotation
    U, _, Vt = np.linalg.svd(rotation)
    return U @ Vt


def parse_pose_line(line: str, number: int = 0):
    words = line.split()
    if len(words) != VALUES_PER_POSE + 1:
        raise PoseFileError(f"Line {number}: expected object id and {VALUES_PER_POSE} numbers, got {len(words)} fields")
    try:
        values = np.array([float(w) for w in words[1:]]).reshape(3, 4)
    except ValueError as e:
        raise PoseFileError(f"Line {number}: {e}") from e
    try:
        return words[0], RigidTransform(_snap_rotation(values[:, :3]), values[:, 3])
    except GeometryError as e:
        raise PoseFileError(f"Line {number}: not a rigid transform ({e})") from e


def load_poses(path) -> list:
    """(object_id, pose) pairs in file order; blank lines and '#' comments are skipped."""
    poses = []
    with open(path, "rb") as f:
        raw = f.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise PoseFileError(f"{path} is not UTF-8 text: {e}") from e
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        poses.append(parse_pose_line(line, number))
    return poses


def save_poses(path, poses) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for object_id, pose in poses:
            if any(c.isspace() for c in object_id) or not object_id:
                raise PoseFileError(f"Object id {object_id!r} must be a non-empty word")
            values = np.hstack([pose.rotation, pose.translation[:, None]]).ravel()
            f.write(object_id + " " + " ".join(repr(float(v)) for v in values) + "\n")
