"""Noise models standing in for a learned regressor's error."""

import enum
from dataclasses import dataclass

import numpy as np

from core.errors import ParameterError
from .schemes import SchemeKind, VoteMap, polar_to_unit, scheme_values

MIN_RADIUS_MM = 1e-6
RELATIVE_SCHEMES = (SchemeKind.OFFSET, SchemeKind.RADIAL)


class NoiseKind(enum.Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class NoiseSpec:
    """Per-channel noise magnitude (sigma for Gaussian, half-width for uniform).

    With ``relative`` set the magnitudes are fractions of each pixel's
    distance to the keypoint (the offset length or the radius) rather than
    millimetres. Only distance-carrying schemes accept relative noise.
    """

    kind: NoiseKind = NoiseKind.GAUSSIAN
    sigma_or_halfwidth: tuple = (0.0,)
    mask_flip_rate: float = 0.0
    rng_seed: int = 0
    relative: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        magnitudes = tuple(float(s) for s in np.atleast_1d(self.sigma_or_halfwidth))
        if any(not np.isfinite(s) or s < 0.0 for s in magnitudes):
            raise ParameterError(f"Noise magnitudes must be finite and non-negative, got {magnitudes}")
        if not 0.0 <= self.mask_flip_rate < 1.0:
            raise ParameterError(f"mask_flip_rate must lie in [0, 1), got {self.mask_flip_rate}")
        object.__setattr__(self, "sigma_or_halfwidth", magnitudes)

    @property
    def is_zero(self) -> bool:
        return self.mask_flip_rate == 0.0 and all(s == 0.0 for s in self.sigma_or_halfwidth)

    def channel_magnitudes(self, scheme: SchemeKind) -> np.ndarray:
        if self.relative and scheme not in RELATIVE_SCHEMES:
            raise ParameterError(f"Relative noise needs a distance-carrying scheme, got {scheme.value}")
        magnitudes = np.asarray(self.sigma_or_halfwidth)
        if len(magnitudes) == 1:
            return np.repeat(magnitudes, scheme.channel_depth)
        if len(magnitudes) != scheme.channel_depth:
            raise ParameterError(
                f"{scheme.value} maps have {scheme.channel_depth} channels, noise spec gives {len(magnitudes)}"
            )
        return magnitudes

    def reseeded(self, seed: int) -> "NoiseSpec":
        return NoiseSpec(self.kind, self.sigma_or_halfwidth, self.mask_flip_rate, int(seed), self.relative)


def _draw(rng, spec: NoiseSpec, magnitudes: np.ndarray, count: int) -> np.ndarray:
    if spec.kind is NoiseKind.GAUSSIAN:
        return rng.normal(0.0, 1.0, size=(count, len(magnitudes))) * magnitudes
    return rng.uniform(-1.0, 1.0, size=(count, len(magnitudes))) * magnitudes


def _repair(scheme: SchemeKind, values: np.ndarray, original: np.ndarray) -> np.ndarray:
    """Bring perturbed values back onto the scheme's value domain."""
    if scheme is SchemeKind.RADIAL:
        return np.maximum(values, MIN_RADIUS_MM)
    if scheme is SchemeKind.VECTOR:
        norms = np.linalg.norm(values, axis=1)
        degenerate = norms == 0.0
        values = np.where(degenerate[:, None], original, values)
        return values / np.linalg.norm(values, axis=1)[:, None]
    if scheme is SchemeKind.POLAR:
        return _polar_wrap(values)
    return values


def _polar_wrap(values: np.ndarray) -> np.ndarray:
    unit = polar_to_unit(values)
    return scheme_values(SchemeKind.POLAR, unit)


def apply_noise(vote_map: VoteMap, spec: NoiseSpec) -> VoteMap:
    """Perturb masked values channel-wise and flip mask bits.

    Pixels flipped into the mask take the value of a randomly chosen
    originally-masked pixel before noise is added; pixels flipped out are
    cleared. Relative magnitudes scale with the norm of each pixel's value.
    A zero spec returns the map unchanged.
    """
    if spec.is_zero:
        return vote_map
    scheme = vote_map.scheme
    magnitudes = spec.channel_magnitudes(scheme)
    rng = np.random.default_rng(spec.rng_seed)

    mask = vote_map.mask.copy()
    values = vote_map.values.copy()
    if spec.mask_flip_rate > 0.0:
        flips = rng.random(mask.shape) < spec.mask_flip_rate
        source = np.flatnonzero(vote_map.mask)
        gained = flips & ~mask
        if len(source) and gained.any():
            picks = rng.integers(0, len(source), size=int(gained.sum()))
            values[gained] = vote_map.values.reshape(-1, scheme.channel_depth)[source[picks]]
        elif not len(source):
            gained[:] = False
        mask = (mask & ~flips) | gained
        values[~mask] = 0.0

    original = values[mask]
    draws = _draw(rng, spec, magnitudes, len(original))
    if spec.relative:
        draws *= np.linalg.norm(original, axis=1)[:, None]
    noisy = original + draws
    values[mask] = _repair(scheme, noisy, original)
    return vote_map.with_values(values, mask)
