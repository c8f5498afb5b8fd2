"""Experiment configuration files (JSON) validated into an ExperimentSpec.

Every key is optional; an empty file yields the defaults from config.json.
Unknown keys, wrong types and out-of-range values raise ConfigError naming
the offending field.
"""

import json
import logging
import numbers

from core.config import get_noise_profile
from core.errors import ConfigError, DataIOError, ParameterError
from pose_pipeline.objects import SHAPES
from pose_pipeline.specs import ExperimentKind, ExperimentSpec, KeypointSetKind, NoiseConfig, ObjectSpec
from vote_maps.noise import RELATIVE_SCHEMES, NoiseKind
from vote_maps.schemes import SchemeKind
from .manifest import load_manifest

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = {
    "experiment",
    "schemes",
    "resolutions_mm",
    "scales",
    "keypoint_counts",
    "keypoint_sets",
    "objects",
    "noise",
    "trials",
    "seed",
    "vote_sample",
    "perturbation_mm",
    "occlusion",
    "icp",
    "timing_repeats",
    "auc_max_mm",
    "accuracy_fraction",
    "record_timing",
    "max_grid_mb",
    "model_points",
    "paths",
}
OBJECT_KEYS = {"name", "shape", "radius_mm", "path", "scale", "symmetric"}
NOISE_KEYS = {"kind", "sigma", "mask_flip_rate", "relative"}
PATH_KEYS = {"output_dir", "dataset_manifest"}


def _reject_unknown(data: dict, allowed: set, prefix: str = "") -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{prefix}{key}", f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _number(value, field, positive=False, minimum=None, below=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigError(field, f"expected a number, got {type(value).__name__}")
    value = float(value)
    if positive and not value > 0:
        raise ConfigError(field, f"must be positive, got {value}")
    if minimum is not None and value < minimum:
        raise ConfigError(field, f"must be at least {minimum}, got {value}")
    if below is not None and not value < below:
        raise ConfigError(field, f"must be below {below}, got {value}")
    return value


def _integer(value, field, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(field, f"expected an integer, got {type(value).__name__}")
    if minimum is not None and value < minimum:
        raise ConfigError(field, f"must be at least {minimum}, got {value}")
    return int(value)


def _boolean(value, field):
    if not isinstance(value, bool):
        raise ConfigError(field, f"expected true or false, got {type(value).__name__}")
    return value


def _string(value, field):
    if not isinstance(value, str):
        raise ConfigError(field, f"expected a string, got {type(value).__name__}")
    return value


def _list(value, field):
    if not isinstance(value, list) or not value:
        raise ConfigError(field, "expected a non-empty list")
    return value


def _choice(value, field, enum_cls):
    value = _string(value, field)
    try:
        return enum_cls(value.lower())
    except ValueError:
        raise ConfigError(field, f"'{value}' is not one of {[e.value for e in enum_cls]}") from None


def _objects(value, field="objects"):
    specs = []
    for i, item in enumerate(_list(value, field)):
        where = f"{field}[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(where, "expected an object")
        _reject_unknown(item, OBJECT_KEYS, f"{where}.")
        if "name" not in item:
            raise ConfigError(f"{where}.name", "missing required field")
        name = _string(item["name"], f"{where}.name")
        symmetric = _boolean(item.get("symmetric", False), f"{where}.symmetric")
        if "path" in item:
            if "scale" not in item:
                raise ConfigError(f"{where}.scale", "missing required field (mm per model unit)")
            spec = ObjectSpec(
                name,
                path=_string(item["path"], f"{where}.path"),
                scale=_number(item["scale"], f"{where}.scale", positive=True),
                symmetric=symmetric,
            )
        else:
            for key in ("shape", "radius_mm"):
                if key not in item:
                    raise ConfigError(f"{where}.{key}", "missing required field")
            shape = _string(item["shape"], f"{where}.shape")
            if shape not in SHAPES:
                raise ConfigError(f"{where}.shape", f"'{shape}' is not one of {list(SHAPES)}")
            spec = ObjectSpec(
                name,
                shape=shape,
                radius_mm=_number(item["radius_mm"], f"{where}.radius_mm", positive=True),
                symmetric=symmetric,
            )
        specs.append(spec)
    return tuple(specs)


def _noise(value, field="noise"):
    if isinstance(value, str):
        try:
            get_noise_profile(value)
        except KeyError as e:
            raise ConfigError(field, e.args[0]) from None
        return NoiseConfig.from_profile(value)
    if not isinstance(value, dict):
        raise ConfigError(field, "expected a profile name or an object")
    _reject_unknown(value, NOISE_KEYS, f"{field}.")
    kind = _choice(value.get("kind", "gaussian"), f"{field}.kind", NoiseKind)
    sigma = {}
    raw_sigma = value.get("sigma", {})
    if not isinstance(raw_sigma, dict):
        raise ConfigError(f"{field}.sigma", "expected an object keyed by scheme")
    for key, magnitudes in raw_sigma.items():
        scheme = _choice(key, f"{field}.sigma.{key}", SchemeKind)
        if isinstance(magnitudes, numbers.Real) and not isinstance(magnitudes, bool):
            magnitudes = [magnitudes]
        magnitudes = [
            _number(m, f"{field}.sigma.{key}[{i}]", minimum=0.0) for i, m in enumerate(_list(magnitudes, f"{field}.sigma.{key}"))
        ]
        if len(magnitudes) not in (1, scheme.channel_depth):
            raise ConfigError(
                f"{field}.sigma.{key}", f"expected 1 or {scheme.channel_depth} values, got {len(magnitudes)}"
            )
        sigma[scheme] = tuple(magnitudes)
    flip = _number(value.get("mask_flip_rate", 0.0), f"{field}.mask_flip_rate", minimum=0.0, below=1.0)
    relative = set()
    for i, key in enumerate(_list(value["relative"], f"{field}.relative") if "relative" in value else ()):
        scheme = _choice(key, f"{field}.relative[{i}]", SchemeKind)
        if scheme not in RELATIVE_SCHEMES:
            raise ConfigError(f"{field}.relative[{i}]", f"{scheme.value} votes carry no distance to scale by")
        relative.add(scheme)
    return NoiseConfig(kind, sigma, flip, None, frozenset(relative))


def parse_config(data: dict) -> ExperimentSpec:
    """Validate a decoded configuration mapping."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    _reject_unknown(data, TOP_LEVEL_KEYS)
    kwargs = {}
    if "experiment" in data:
        kwargs["experiment"] = _choice(data["experiment"], "experiment", ExperimentKind)
    if "schemes" in data:
        kwargs["schemes"] = tuple(
            _choice(s, f"schemes[{i}]", SchemeKind) for i, s in enumerate(_list(data["schemes"], "schemes"))
        )
    if "resolutions_mm" in data:
        kwargs["resolutions_mm"] = tuple(
            _number(r, f"resolutions_mm[{i}]", positive=True)
            for i, r in enumerate(_list(data["resolutions_mm"], "resolutions_mm"))
        )
    if "scales" in data:
        kwargs["scales"] = tuple(
            _number(s, f"scales[{i}]", positive=True) for i, s in enumerate(_list(data["scales"], "scales"))
        )
    if "keypoint_counts" in data:
        kwargs["keypoint_counts"] = tuple(
            _integer(k, f"keypoint_counts[{i}]", minimum=3)
            for i, k in enumerate(_list(data["keypoint_counts"], "keypoint_counts"))
        )
    if "keypoint_sets" in data:
        kwargs["keypoint_sets"] = tuple(
            _choice(k, f"keypoint_sets[{i}]", KeypointSetKind).value
            for i, k in enumerate(_list(data["keypoint_sets"], "keypoint_sets"))
        )
    if "objects" in data:
        kwargs["objects"] = _objects(data["objects"])
    if "noise" in data:
        kwargs["noise"] = _noise(data["noise"])

    for key, minimum in (("trials", 1), ("vote_sample", 1), ("timing_repeats", 1), ("model_points", 16)):
        if key in data:
            kwargs[key] = _integer(data[key], key, minimum=minimum)
    if "seed" in data:
        kwargs["seed"] = _integer(data["seed"], "seed", minimum=0)
    for key in ("auc_max_mm", "accuracy_fraction", "max_grid_mb"):
        if key in data:
            kwargs[key] = _number(data[key], key, positive=True)
    if "perturbation_mm" in data:
        kwargs["perturbation_mm"] = _number(data["perturbation_mm"], "perturbation_mm", minimum=0.0)
    if "occlusion" in data:
        kwargs["occlusion"] = _number(data["occlusion"], "occlusion", minimum=0.0, below=1.0)
    for key in ("icp", "record_timing"):
        if key in data:
            kwargs[key] = _boolean(data[key], key)

    if "paths" in data:
        paths = data["paths"]
        if not isinstance(paths, dict):
            raise ConfigError("paths", "expected an object")
        _reject_unknown(paths, PATH_KEYS, "paths.")
        kwargs["paths"] = {k: _string(v, f"paths.{k}") for k, v in paths.items()}
        manifest = kwargs["paths"].get("dataset_manifest")
        if manifest and "objects" not in kwargs:
            kwargs["objects"] = manifest_objects(manifest)

    try:
        return ExperimentSpec(**kwargs)
    except ParameterError as e:
        raise ConfigError("<root>", str(e)) from e


def manifest_objects(path) -> tuple:
    """One model object per distinct object id in a dataset manifest."""
    seen = {}
    for entry in load_manifest(path):
        seen.setdefault(
            entry.object_id,
            ObjectSpec(entry.object_id, path=entry.model_path, scale=entry.model_scale, symmetric=entry.symmetric),
        )
    return tuple(seen.values())


def load_config(path) -> ExperimentSpec:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise DataIOError(f"Cannot read configuration {path}: {e}") from e
    if not text.strip():
        logger.info(f"{path} is empty; using default configuration")
        return ExperimentSpec()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<root>", f"not valid JSON ({e.msg} at line {e.lineno})") from e
    return parse_config(data)
