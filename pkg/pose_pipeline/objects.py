"""Procedural stand-in models, sized to the LINEMOD ape/driller/eggbox radii."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from core.errors import ParameterError
from geometry.types import PointCloud

DEFAULT_POINTS = 6000

SHAPES = ("sphere_shell", "box_shell", "l_bracket")


@dataclass(frozen=True, eq=False)
class ModelObject:
    name: str
    model: PointCloud
    symmetric: bool = False

    @property
    def radius(self) -> float:
        return self.model.radius

    @property
    def centroid(self) -> np.ndarray:
        return self.model.centroid


def _box_surface(rng, lo, hi, count) -> np.ndarray:
    """Uniform samples over the six faces of the box [lo, hi]."""
    size = hi - lo
    areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]] * 2)
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    points = lo + rng.random((count, 3)) * size
    axis = faces % 3
    rows = np.arange(count)
    points[rows, axis] = np.where(faces < 3, lo[axis], hi[axis])
    return points


def sphere_shell(count: int, rng) -> np.ndarray:
    points = rng.normal(size=(count, 3))
    return points / np.linalg.norm(points, axis=1)[:, None]


def box_shell(count: int, rng, proportions=(1.0, 0.7, 0.45)) -> np.ndarray:
    half = np.asarray(proportions, dtype=np.float64)
    return _box_surface(rng, -half, half, count)


def l_bracket(count: int, rng) -> np.ndarray:
    """Two slabs joined at a right angle; no rotational symmetry."""
    upright_lo, upright_hi = np.array([0.0, 0.0, 0.0]), np.array([0.3, 1.0, 0.6])
    foot_lo, foot_hi = np.array([0.0, 0.0, 0.0]), np.array([1.4, 0.25, 0.6])
    upright_area = 2 * (0.3 * 1.0 + 0.3 * 0.6 + 1.0 * 0.6)
    foot_area = 2 * (1.4 * 0.25 + 1.4 * 0.6 + 0.25 * 0.6)
    n_upright = int(round(count * upright_area / (upright_area + foot_area)))
    return np.vstack(
        [
            _box_surface(rng, upright_lo, upright_hi, n_upright),
            _box_surface(rng, foot_lo, foot_hi, count - n_upright),
        ]
    )


def synthetic_model(shape: str, radius_mm: float, count: int = DEFAULT_POINTS, seed: int = 0) -> PointCloud:
    """Shape centred on its centroid and scaled so its object radius is ``radius_mm``."""
    if not radius_mm > 0:
        raise ParameterError(f"radius_mm must be positive, got {radius_mm}")
    rng = np.random.default_rng(seed)
    if shape == "sphere_shell":
        points = sphere_shell(count, rng)
    elif shape == "box_shell":
        points = box_shell(count, rng)
    elif shape == "l_bracket":
        points = l_bracket(count, rng)
    else:
        raise ParameterError(f"Unknown synthetic shape '{shape}', expected one of {SHAPES}")
    points = points - points.mean(axis=0)
    points *= radius_mm / np.max(np.linalg.norm(points, axis=1))
    return PointCloud(points)


# name -> (shape, radius mm, symmetric)
PRESETS = {
    "ape": ("l_bracket", 61.2, False),
    "driller": ("box_shell", 129.4, False),
    "eggbox": ("box_shell", 82.5, True),
}


def preset_object(name: str, count: int = DEFAULT_POINTS, seed: int = 0) -> ModelObject:
    shape, radius, symmetric = PRESETS[name]
    return ModelObject(name, synthetic_model(shape, radius, count, seed), symmetric)
