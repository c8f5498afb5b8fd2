"""Dataset manifests: JSON lists of real-model frames with ground-truth poses."""

import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

from core.errors import DataIOError, GeometryError
from geometry.types import CameraIntrinsics, DepthFrame, PointCloud, RigidTransform
from .depth import load_depth_png16
from .ply import load_ply
from .poses import parse_pose_line

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetEntry:
    object_id: str
    model_path: str
    model_scale: float
    gt_pose: RigidTransform
    intrinsics: CameraIntrinsics
    depth_path: Optional[str] = None
    depth_scale: float = 1.0
    symmetric: bool = False

    def load_model(self) -> PointCloud:
        return load_ply(self.model_path, self.model_scale)

    def load_frame(self) -> DepthFrame:
        if self.depth_path is None:
            raise DataIOError(f"Entry '{self.object_id}' has no depth image")
        return DepthFrame(load_depth_png16(self.depth_path, self.depth_scale), self.intrinsics)


def read_manifest(path):
    with open(path, 'r', encoding='utf-8') as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise DataIOError(f"Manifest {path} is not valid JSON: {e}") from e


def write_manifest(path, data):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, ensure_ascii=False, indent=2)


def _entry(record: dict, base_dir: str, index: int) -> DatasetEntry:
    where = f"entries[{index}]"
    try:
        object_id = str(record["object_id"])
        model_path = os.path.join(base_dir, record["model_path"])
        model_scale = float(record["model_scale"])
        pose_values = record["gt_pose"]
    except KeyError as e:
        raise DataIOError(f"{where} is missing {e.args[0]}") from e
    except (TypeError, ValueError) as e:
        raise DataIOError(f"{where} has a malformed field: {e}") from e
    if not isinstance(pose_values, list):
        raise DataIOError(f"{where}.gt_pose must be a list of 12 numbers")
    _, gt_pose = parse_pose_line(" ".join([object_id] + [str(v) for v in pose_values]), index)

    try:
        intrinsics = (
            CameraIntrinsics.from_dict(record["intrinsics"]) if "intrinsics" in record else CameraIntrinsics.linemod()
        )
    except (GeometryError, KeyError, TypeError, ValueError) as e:
        raise DataIOError(f"{where}.intrinsics: {e}") from e
    depth_path = record.get("depth_path")
    if depth_path is not None:
        depth_path = os.path.join(base_dir, depth_path)

    for label, file_path in (("model_path", model_path), ("depth_path", depth_path)):
        if file_path is not None and not os.path.isfile(file_path):
            raise DataIOError(f"{where}.{label} does not exist: {file_path}")
    return DatasetEntry(
        object_id,
        model_path,
        model_scale,
        gt_pose,
        intrinsics,
        depth_path,
        float(record.get("depth_scale", 1.0)),
        bool(record.get("symmetric", False)),
    )


def load_manifest(path) -> list:
    """Entries of a manifest; relative paths resolve against the manifest's directory."""
    data = read_manifest(path)
    records = data.get("entries") if isinstance(data, dict) else data
    if not isinstance(records, list):
        raise DataIOError(f"Manifest {path} must hold a list of entries")
    base_dir = os.path.dirname(os.path.abspath(path))
    entries = [_entry(record, base_dir, i) for i, record in enumerate(records)]
    logger.info(f"Loaded {len(entries)} dataset entries from {path}")
    return entries
