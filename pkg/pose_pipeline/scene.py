"""Synthetic camera-frame scenes: random poses and rendered vote maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from geometry.types import CameraIntrinsics, DepthFrame, KeypointSet, RigidTransform
from vote_maps.render import generate_gt_maps
from vote_maps.schemes import SchemeKind, VoteMap
from .objects import ModelObject

# Object centre depth range in front of the camera, mm.
DEPTH_RANGE_MM = (650.0, 950.0)
# Lateral placement range, mm; keeps objects of LINEMOD size inside the view.
LATERAL_RANGE_MM = 60.0
BACKGROUND_GAP_MM = 250.0


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_pose(rng, obj: ModelObject | None = None) -> RigidTransform:
    """Uniform rotation, object centroid placed in front of the camera."""
    rotation = random_rotation(rng)
    center = np.array(
        [
            rng.uniform(-LATERAL_RANGE_MM, LATERAL_RANGE_MM),
            rng.uniform(-LATERAL_RANGE_MM, LATERAL_RANGE_MM),
            rng.uniform(*DEPTH_RANGE_MM),
        ]
    )
    centroid = np.zeros(3) if obj is None else obj.centroid
    return RigidTransform(rotation, center - rotation @ centroid)


def random_direction(rng, count: int) -> np.ndarray:
    directions = rng.normal(size=(count, 3))
    return directions / np.linalg.norm(directions, axis=1)[:, None]


@dataclass(eq=False)
class SyntheticFrame:
    obj: ModelObject
    pose: RigidTransform
    keypoints: KeypointSet
    intrinsics: CameraIntrinsics
    maps: dict = field(default_factory=dict)

    @property
    def camera_keypoints(self) -> np.ndarray:
        return self.pose.apply(self.keypoints.keypoints)

    @property
    def frame(self) -> DepthFrame:
        first = next(iter(self.maps.values()))[0]
        return DepthFrame(first.depth, self.intrinsics)

    @property
    def mask(self) -> np.ndarray:
        return next(iter(self.maps.values()))[0].mask

    def maps_for(self, scheme: SchemeKind) -> list[VoteMap]:
        return self.maps[SchemeKind.parse(scheme)]


def render_frame(
    obj: ModelObject,
    pose: RigidTransform,
    keypoints: KeypointSet,
    schemes,
    intrinsics: CameraIntrinsics | None = None,
    with_background: bool = False,
) -> SyntheticFrame:
    """Ground-truth maps for every scheme in ``schemes`` on one rendered view."""
    intrinsics = intrinsics or CameraIntrinsics.linemod()
    background = None
    if with_background:
        background = float(pose.translation[2] + obj.radius + BACKGROUND_GAP_MM)
    frame = SyntheticFrame(obj, pose, keypoints, intrinsics)
    for scheme in schemes:
        scheme = SchemeKind.parse(scheme)
        frame.maps[scheme] = generate_gt_maps(obj.model, pose, keypoints, intrinsics, scheme, background)
    return frame
