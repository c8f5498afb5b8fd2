"""Experiment descriptions consumed by the runner and produced by the config loader."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from core.config import get_defaults, get_noise_profile
from core.errors import ParameterError
from vote_maps.noise import NoiseKind, NoiseSpec
from vote_maps.schemes import SchemeKind
from .objects import PRESETS, SHAPES, ModelObject, preset_object, synthetic_model


class ExperimentKind(enum.Enum):
    SCHEME_COMPARISON = "scheme_comparison"
    DISPERSION_SWEEP = "dispersion_sweep"
    RESOLUTION_SWEEP = "resolution_sweep"
    KEYPOINT_COUNT = "keypoint_count"
    ENSEMBLE = "ensemble"


class KeypointSetKind(enum.Enum):
    SURFACE = "surface"
    DISPERSE = "disperse"


ALL_SCHEMES = tuple(SchemeKind)
ENSEMBLE_SCHEMES = (SchemeKind.RADIAL, SchemeKind.OFFSET, SchemeKind.VECTOR)
SWEEP_RESOLUTIONS_MM = (1.0, 2.0, 4.0, 5.0, 8.0, 16.0)
SWEEP_SCALES = (1.0, 2.0, 3.0, 4.0, 5.0)
# Bounding box grown by this factor before its corners become disperse keypoints.
DISPERSE_BOX_SCALE = 2.0
DISPERSION_KEYPOINTS = 4
KEYPOINT_COUNT_SWEEP = (3, 4, 8)


@dataclass(frozen=True)
class ObjectSpec:
    """A synthetic shape (``shape`` + ``radius_mm``) or a PLY model (``path`` + ``scale``)."""

    name: str
    shape: str | None = None
    radius_mm: float | None = None
    path: str | None = None
    scale: float | None = None
    symmetric: bool = False

    def __post_init__(self):
        if self.path is None:
            if self.shape not in SHAPES:
                raise ParameterError(f"Object '{self.name}': shape must be one of {SHAPES}, got {self.shape!r}")
            if self.radius_mm is None or not self.radius_mm > 0:
                raise ParameterError(f"Object '{self.name}': radius_mm must be positive")
        elif self.scale is None or not self.scale > 0:
            raise ParameterError(f"Object '{self.name}': a positive unit scale is required for model files")

    @classmethod
    def preset(cls, name: str) -> "ObjectSpec":
        shape, radius, symmetric = PRESETS[name]
        return cls(name, shape=shape, radius_mm=radius, symmetric=symmetric)

    def build(self, model_points: int, seed: int = 0) -> ModelObject:
        if self.path is not None:
            from data_io.ply import load_ply

            return ModelObject(self.name, load_ply(self.path, self.scale), self.symmetric)
        if self.name in PRESETS and PRESETS[self.name] == (self.shape, self.radius_mm, self.symmetric):
            return preset_object(self.name, model_points, seed)
        return ModelObject(self.name, synthetic_model(self.shape, self.radius_mm, model_points, seed), self.symmetric)


def default_objects() -> tuple:
    return tuple(ObjectSpec.preset(name) for name in PRESETS)


@dataclass(frozen=True)
class NoiseConfig:
    """Per-scheme channel magnitudes plus a shared mask flip rate.

    Schemes listed in ``relative`` read their magnitudes as fractions of the
    pixel-to-keypoint distance.
    """

    kind: NoiseKind = NoiseKind.GAUSSIAN
    sigma: dict = field(default_factory=dict)
    mask_flip_rate: float = 0.0
    profile: str | None = None
    relative: frozenset = frozenset()

    @classmethod
    def from_profile(cls, name: str) -> "NoiseConfig":
        profile = get_noise_profile(name)
        return cls.from_dict(profile, name)

    @classmethod
    def from_dict(cls, data: dict, profile: str | None = None) -> "NoiseConfig":
        sigma = {SchemeKind.parse(k): tuple(float(s) for s in v) for k, v in data.get("sigma", {}).items()}
        relative = frozenset(SchemeKind.parse(k) for k in data.get("relative", ()))
        return cls(
            NoiseKind(data.get("kind", "gaussian")), sigma, float(data.get("mask_flip_rate", 0.0)), profile, relative
        )

    def scaled(self, factor: float) -> "NoiseConfig":
        sigma = {k: tuple(s * factor for s in v) for k, v in self.sigma.items()}
        return NoiseConfig(self.kind, sigma, self.mask_flip_rate, None, self.relative)

    def spec_for(self, scheme: SchemeKind, seed: int) -> NoiseSpec:
        magnitudes = self.sigma.get(scheme, (0.0,))
        return NoiseSpec(self.kind, magnitudes, self.mask_flip_rate, int(seed), scheme in self.relative)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "sigma": {k.value: list(v) for k, v in self.sigma.items()},
            "mask_flip_rate": self.mask_flip_rate,
            "relative": sorted(k.value for k in self.relative),
            "profile": self.profile,
        }


def _default(key):
    return lambda: get_defaults()[key]


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything that determines an experiment's output apart from the thread count.

    ``None`` for resolutions, scales, keypoint counts, keypoint sets or objects
    means "use the default for this experiment kind".
    """

    experiment: ExperimentKind = ExperimentKind.SCHEME_COMPARISON
    schemes: tuple = ALL_SCHEMES
    resolutions_mm: tuple | None = None
    scales: tuple | None = None
    keypoint_counts: tuple | None = None
    keypoint_sets: tuple | None = None
    objects: tuple | None = None
    noise: NoiseConfig = field(default_factory=lambda: NoiseConfig.from_profile(get_defaults()["noise_profile"]))
    trials: int = field(default_factory=_default("trials"))
    seed: int = field(default_factory=_default("seed"))
    vote_sample: int = field(default_factory=_default("vote_sample"))
    perturbation_mm: float = field(default_factory=_default("perturbation_mm"))
    occlusion: float = 0.0
    icp: bool = False
    timing_repeats: int = field(default_factory=_default("timing_repeats"))
    auc_max_mm: float = field(default_factory=_default("auc_max_mm"))
    accuracy_fraction: float = field(default_factory=_default("accuracy_fraction"))
    record_timing: bool | None = None
    max_grid_mb: float = field(default_factory=_default("max_grid_mb"))
    model_points: int = field(default_factory=_default("model_points"))
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "experiment", ExperimentKind(self.experiment))
        object.__setattr__(self, "schemes", tuple(SchemeKind.parse(s) for s in self.schemes))
        if self.trials < 1:
            raise ParameterError(f"trials must be at least 1, got {self.trials}")
        if not 0.0 <= self.occlusion < 1.0:
            raise ParameterError(f"occlusion must lie in [0, 1), got {self.occlusion}")

    @property
    def resolutions(self) -> tuple:
        if self.resolutions_mm is not None:
            return tuple(self.resolutions_mm)
        if self.experiment is ExperimentKind.RESOLUTION_SWEEP:
            return SWEEP_RESOLUTIONS_MM
        return (float(get_defaults()["resolution_mm"]),)

    @property
    def scale_values(self) -> tuple:
        if self.scales is not None:
            return tuple(self.scales)
        return SWEEP_SCALES if self.experiment is ExperimentKind.DISPERSION_SWEEP else (1.0,)

    @property
    def keypoint_count_values(self) -> tuple:
        if self.keypoint_counts is not None:
            return tuple(self.keypoint_counts)
        if self.experiment is ExperimentKind.DISPERSION_SWEEP:
            return (DISPERSION_KEYPOINTS,)
        if self.experiment is ExperimentKind.KEYPOINT_COUNT:
            return KEYPOINT_COUNT_SWEEP
        return (int(get_defaults()["keypoint_count"]),)

    @property
    def keypoint_set_values(self) -> tuple:
        if self.keypoint_sets is not None:
            return tuple(KeypointSetKind(k) for k in self.keypoint_sets)
        if self.experiment is ExperimentKind.SCHEME_COMPARISON:
            return (KeypointSetKind.SURFACE, KeypointSetKind.DISPERSE)
        if self.experiment is ExperimentKind.DISPERSION_SWEEP:
            return (KeypointSetKind.SURFACE,)
        if self.experiment is ExperimentKind.RESOLUTION_SWEEP:
            return (KeypointSetKind.SURFACE,)
        return (KeypointSetKind.DISPERSE,)

    @property
    def object_specs(self) -> tuple:
        if self.objects is not None:
            return tuple(self.objects)
        if self.experiment is ExperimentKind.RESOLUTION_SWEEP:
            return (ObjectSpec.preset("ape"),)
        return default_objects()

    @property
    def times_voting(self) -> bool:
        if self.record_timing is not None:
            return self.record_timing
        return self.experiment is ExperimentKind.RESOLUTION_SWEEP

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment.value,
            "schemes": [s.value for s in self.schemes],
            "resolutions_mm": list(self.resolutions),
            "scales": list(self.scale_values),
            "keypoint_counts": list(self.keypoint_count_values),
            "keypoint_sets": [k.value for k in self.keypoint_set_values],
            "objects": [
                {k: v for k, v in vars(o).items() if v is not None} for o in self.object_specs
            ],
            "noise": self.noise.to_dict(),
            "trials": self.trials,
            "seed": self.seed,
            "vote_sample": self.vote_sample,
            "perturbation_mm": self.perturbation_mm,
            "occlusion": self.occlusion,
            "icp": self.icp,
            "timing_repeats": self.timing_repeats,
            "auc_max_mm": self.auc_max_mm,
            "accuracy_fraction": self.accuracy_fraction,
            "record_timing": self.times_voting,
            "max_grid_mb": self.max_grid_mb,
            "model_points": self.model_points,
            "paths": dict(self.paths),
        }
