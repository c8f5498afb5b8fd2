"""Value types for camera-frame geometry. Millimetres everywhere."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from core.errors import GeometryError, ParameterError, RankError, SizeError

ORTHONORMAL_TOLERANCE = 1e-9
COLLINEAR_RATIO = 1e-6


def as_point(value) -> np.ndarray:
    """Coerce to a finite float64 3-vector."""
    point = np.asarray(value, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(point)):
        raise GeometryError(f"Point has non-finite components: {point}")
    return point


def as_points(values) -> np.ndarray:
    points = np.asarray(values, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(1, 3)
    if points.ndim != 2 or points.shape[1] != 3:
        raise SizeError(f"Expected an (N, 3) array of points, got shape {points.shape}")
    return points


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Pixel:
    u: int
    v: int
    depth: float


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ParameterError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ParameterError(
                f"Principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraIntrinsics":
        return cls(
            float(data["fx"]),
            float(data["fy"]),
            float(data["cx"]),
            float(data["cy"]),
            int(data["width"]),
            int(data["height"]),
        )

    @classmethod
    def linemod(cls) -> "CameraIntrinsics":
        return cls(572.4114, 573.57043, 325.2611, 242.04899, 640, 480)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Camera-frame object pose: x_cam = R @ x_obj + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rotation.shape != (3, 3):
            raise GeometryError(f"Rotation must be 3x3, got {rotation.shape}")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise GeometryError("Rigid transform has non-finite entries")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > ORTHONORMAL_TOLERANCE:
            raise GeometryError("Rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise GeometryError("Rotation determinant is not +1")
        object.__setattr__(self, "rotation", _frozen(rotation))
        object.__setattr__(self, "translation", _frozen(translation))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape == (3, 4) or matrix.shape == (4, 4):
            return cls(matrix[:3, :3], matrix[:3, 3])
        raise GeometryError(f"Expected a 3x4 or 4x4 matrix, got {matrix.shape}")

    @property
    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rotation_t = self.rotation.T
        return RigidTransform(rotation_t, -rotation_t @ self.translation)

    def rotation_error_deg(self, other: "RigidTransform") -> float:
        relative = self.rotation.T @ other.rotation
        cos_angle = np.clip((np.trace(relative) - 1.0) / 2.0, -1.0, 1.0)
        return float(np.degrees(np.arccos(cos_angle)))

    def translation_error(self, other: "RigidTransform") -> float:
        return float(np.linalg.norm(self.translation - other.translation))

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        points = as_points(self.points)
        if len(points) == 0:
            raise SizeError("Point cloud is empty")
        if not np.all(np.isfinite(points)):
            raise GeometryError("Point cloud has non-finite coordinates")
        object.__setattr__(self, "points", _frozen(points))
        if self.normals is not None:
            normals = as_points(self.normals)
            if normals.shape != points.shape:
                raise SizeError(f"Normals shape {normals.shape} does not match points {points.shape}")
            object.__setattr__(self, "normals", _frozen(normals))

    def __len__(self):
        return len(self.points)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    @property
    def radius(self) -> float:
        """Largest centroid-to-point distance."""
        return float(np.max(np.linalg.norm(self.points - self.centroid, axis=1)))

    def transformed(self, pose: RigidTransform) -> "PointCloud":
        normals = None if self.normals is None else self.normals @ pose.rotation.T
        return PointCloud(pose.apply(self.points), normals)


class SelectionMethod(enum.Enum):
    FPS = "fps"
    SCALED_BBOX = "scaled_bbox"


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """Object-frame keypoints. Pose recovery needs at least three non-collinear ones."""

    keypoints: np.ndarray
    selection_method: SelectionMethod
    dispersion_scale: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        keypoints = as_points(self.keypoints)
        if not np.all(np.isfinite(keypoints)):
            raise GeometryError("Keypoints have non-finite coordinates")
        object.__setattr__(self, "keypoints", _frozen(keypoints))

    def __len__(self):
        return len(self.keypoints)

    def subset(self, count: int) -> "KeypointSet":
        if count > len(self):
            raise SizeError(f"Requested {count} keypoints from a set of {len(self)}")
        return KeypointSet(self.keypoints[:count], self.selection_method, self.dispersion_scale, dict(self.metadata))

    def mean_distance(self, centroid) -> float:
        """Mean keypoint distance to ``centroid`` (r̄)."""
        return float(np.mean(np.linalg.norm(self.keypoints - as_point(centroid), axis=1)))

    def require_pose_ready(self) -> None:
        check_non_collinear(self.keypoints)


def check_non_collinear(points: np.ndarray) -> None:
    points = as_points(points)
    if len(points) < 3:
        raise SizeError(f"At least 3 points are required, got {len(points)}")
    centered = points - points.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    # rank 2 (coplanar) is fine; rank <= 1 is collinear or coincident
    if singular[0] == 0.0 or singular[1] <= COLLINEAR_RATIO * singular[0]:
        raise RankError("Points are collinear or coincident")


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """A depth image (mm, 0 = invalid) with the intrinsics it was taken with."""

    depth: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        if depth.shape != (self.intrinsics.height, self.intrinsics.width):
            raise SizeError(
                f"Depth {depth.shape} does not match intrinsics {self.intrinsics.height}x{self.intrinsics.width}"
            )
        object.__setattr__(self, "depth", depth)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0.0)
