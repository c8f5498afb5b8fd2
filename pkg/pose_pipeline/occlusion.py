"""Remove part of an object's segmentation to mimic occluders."""

import enum

import numpy as np

from core.errors import ParameterError


class OcclusionMode(enum.Enum):
    HALF_PLANE = "half_plane"
    DROPOUT = "dropout"


def _check_fraction(fraction: float) -> None:
    if not 0.0 <= fraction < 1.0:
        raise ParameterError(f"Occluded fraction must lie in [0, 1), got {fraction}")


def half_plane_occlusion(mask: np.ndarray, fraction: float, rng) -> np.ndarray:
    """Cut the mask along a random image line so ``fraction`` of its pixels are hidden."""
    _check_fraction(fraction)
    mask = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    drop = int(round(fraction * len(rows)))
    if drop == 0:
        return mask.copy()
    angle = rng.uniform(0.0, 2.0 * np.pi)
    along = cols * np.cos(angle) + rows * np.sin(angle)
    # stable sort keeps the cut reproducible when pixels tie on the line
    hidden = np.argsort(-along, kind="stable")[:drop]
    occluded = mask.copy()
    occluded[rows[hidden], cols[hidden]] = False
    return occluded


def dropout_occlusion(mask: np.ndarray, fraction: float, rng) -> np.ndarray:
    """Hide a uniformly random ``fraction`` of the masked pixels."""
    _check_fraction(fraction)
    mask = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    drop = int(round(fraction * len(rows)))
    occluded = mask.copy()
    if drop:
        hidden = rng.choice(len(rows), size=drop, replace=False)
        occluded[rows[hidden], cols[hidden]] = False
    return occluded


def occlude_maps(maps, fraction: float, rng, mode: OcclusionMode = OcclusionMode.HALF_PLANE) -> list:
    """Apply one occlusion cut to every map of a frame (they share a mask)."""
    maps = list(maps)
    if not maps or fraction == 0.0:
        return maps
    cut = half_plane_occlusion if OcclusionMode(mode) is OcclusionMode.HALF_PLANE else dropout_occlusion
    mask = cut(maps[0].mask, fraction, rng)
    return [m.with_mask(mask) for m in maps]
