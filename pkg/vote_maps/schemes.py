"""Per-pixel voting-scheme quantities and the VoteMap container."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.errors import DegeneracyError, SizeError
from geometry.types import CameraIntrinsics, as_point

UNIT_TOLERANCE = 1e-6


class SchemeKind(enum.Enum):
    OFFSET = "offset"
    VECTOR = "vector"
    POLAR = "polar"
    RADIAL = "radial"

    @property
    def channel_depth(self) -> int:
        return {"offset": 3, "vector": 3, "polar": 2, "radial": 1}[self.value]

    @property
    def casts_rays(self) -> bool:
        return self in (SchemeKind.VECTOR, SchemeKind.POLAR)

    @classmethod
    def parse(cls, value) -> "SchemeKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"Unknown voting scheme '{value}', expected one of {[s.value for s in cls]}") from None


def compute_scheme_value(scheme: SchemeKind, point, keypoint) -> np.ndarray:
    """Scheme quantity of ``point`` with respect to ``keypoint``.

    The offset is point - keypoint, so the direction toward the keypoint
    is the negated unit vector.
    """
    offset = as_point(point) - as_point(keypoint)
    return scheme_values(scheme, offset[None, :])[0]


def scheme_values(scheme: SchemeKind, offsets: np.ndarray) -> np.ndarray:
    """Vectorised ``compute_scheme_value`` over (N, 3) offsets (point - keypoint)."""
    offsets = np.asarray(offsets, dtype=np.float64)
    if scheme is SchemeKind.OFFSET:
        return offsets.copy()
    norms = np.linalg.norm(offsets, axis=1)
    if scheme is SchemeKind.RADIAL:
        return norms[:, None]
    if np.any(norms == 0.0):
        raise DegeneracyError("Point coincides with keypoint; direction undefined")
    unit = offsets / norms[:, None]
    if scheme is SchemeKind.VECTOR:
        return unit
    phi = np.arccos(np.clip(unit[:, 2], -1.0, 1.0))
    psi = np.arctan2(unit[:, 1], unit[:, 0])
    # atan2 returns -pi for (-x, -0.0); keep psi in (-pi, pi]
    psi = np.where(psi == -np.pi, np.pi, psi)
    return np.stack([phi, psi], axis=1)


def polar_to_unit(angles: np.ndarray) -> np.ndarray:
    angles = np.asarray(angles, dtype=np.float64).reshape(-1, 2)
    phi, psi = angles[:, 0], angles[:, 1]
    return np.stack([np.sin(phi) * np.cos(psi), np.sin(phi) * np.sin(psi), np.cos(phi)], axis=1)


def toward_keypoint(scheme: SchemeKind, values: np.ndarray) -> np.ndarray:
    """Unit directions from the voting point toward the keypoint (ray schemes)."""
    if scheme is SchemeKind.VECTOR:
        unit = np.asarray(values, dtype=np.float64).reshape(-1, 3)
    elif scheme is SchemeKind.POLAR:
        unit = polar_to_unit(values)
    else:
        raise ValueError(f"{scheme.value} maps do not cast rays")
    return -unit


@dataclass(frozen=True, eq=False)
class VoteMap:
    """Per-pixel scheme values, segmentation mask and (optionally) depth.

    ``values`` has shape (height, width, channel_depth); entries outside the
    mask are zero.
    """

    scheme: SchemeKind
    values: np.ndarray
    mask: np.ndarray
    depth: Optional[np.ndarray] = None
    intrinsics: Optional[CameraIntrinsics] = None
    keypoint: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 2:
            values = values[:, :, None]
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape[:2] != mask.shape:
            raise SizeError(f"Values {values.shape[:2]} and mask {mask.shape} differ in size")
        if values.shape[2] != self.scheme.channel_depth:
            raise SizeError(
                f"{self.scheme.value} maps need {self.scheme.channel_depth} channels, got {values.shape[2]}"
            )
        if self.depth is not None and np.shape(self.depth) != mask.shape:
            raise SizeError(f"Depth {np.shape(self.depth)} and mask {mask.shape} differ in size")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def masked_values(self) -> np.ndarray:
        return self.values[self.mask]

    def with_values(self, values: np.ndarray, mask: np.ndarray | None = None) -> "VoteMap":
        return VoteMap(
            self.scheme,
            values,
            self.mask if mask is None else mask,
            self.depth,
            self.intrinsics,
            self.keypoint,
        )

    def with_mask(self, mask: np.ndarray) -> "VoteMap":
        values = np.where(mask[:, :, None], self.values, 0.0)
        return self.with_values(values, mask)

    def check(self) -> None:
        """Validate the per-scheme value invariants on masked pixels."""
        vals = self.masked_values
        if not np.all(np.isfinite(vals)):
            raise ValueError("Masked values must be finite")
        if self.scheme is SchemeKind.RADIAL and np.any(vals < 0.0):
            raise ValueError("Radial values must be non-negative on the mask")
        if self.scheme is SchemeKind.VECTOR and len(vals):
            if np.max(np.abs(np.linalg.norm(vals, axis=1) - 1.0)) > UNIT_TOLERANCE:
                raise ValueError("Vector values must be unit-norm on the mask")
        if self.scheme is SchemeKind.POLAR and len(vals):
            phi, psi = vals[:, 0], vals[:, 1]
            if np.any((phi < 0) | (phi > np.pi) | (psi <= -np.pi) | (psi > np.pi)):
                raise ValueError("Polar angles out of range")
