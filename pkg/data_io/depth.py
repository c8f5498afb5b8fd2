"""16-bit single-channel PNG depth images (LINEMOD convention: 1 unit = 1 mm)."""

import logging
import os

import cv2
import numpy as np

from core.errors import DepthFormatError, ParameterError

logger = logging.getLogger(__name__)

DEPTH_MAX_UNITS = np.iinfo(np.uint16).max


def load_depth_png16(path, depth_scale: float = 1.0) -> np.ndarray:
    """Depth in mm as float64; zero marks invalid pixels."""
    if not depth_scale > 0:
        raise ParameterError(f"depth_scale must be positive, got {depth_scale}")
    if not os.path.exists(path):
        raise FileNotFoundError(f"Depth image not found: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    try:
        image = cv2.imdecode(raw, cv2.IMREAD_UNCHANGED) if raw.size else None
    except cv2.error as e:
        raise DepthFormatError(f"Could not decode {path}: {e}") from e
    if image is None:
        raise DepthFormatError(f"Could not decode {path} as an image")
    if image.ndim != 2:
        raise DepthFormatError(f"{path} has {image.shape[2]} channels, expected 1")
    if image.dtype != np.uint16:
        raise DepthFormatError(f"{path} is {image.dtype}, expected 16-bit")
    return image.astype(np.float64) * depth_scale


def save_depth_png16(path, depth: np.ndarray, depth_scale: float = 1.0) -> None:
    """Store ``depth`` (mm) as rounded units of ``depth_scale``; invalid pixels become 0."""
    if not depth_scale > 0:
        raise ParameterError(f"depth_scale must be positive, got {depth_scale}")
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise DepthFormatError(f"Depth must be a 2-D array, got shape {depth.shape}")
    units = np.where(np.isfinite(depth) & (depth > 0.0), np.rint(depth / depth_scale), 0.0)
    if units.max(initial=0.0) > DEPTH_MAX_UNITS:
        raise DepthFormatError(f"Depth exceeds {DEPTH_MAX_UNITS} units at scale {depth_scale}")
    ok, encoded = cv2.imencode(".png", units.astype(np.uint16))
    if not ok:
        raise DepthFormatError(f"PNG encoding failed for {path}")
    encoded.tofile(path)
    logger.debug(f"Wrote {depth.shape[1]}x{depth.shape[0]} depth image to {path}")
