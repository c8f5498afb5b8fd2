"""Pose accuracy metrics: ADD, ADD-s, accuracy at a radius fraction, AUC."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from core.errors import ParameterError, SizeError
from geometry.types import PointCloud, RigidTransform

# Above this many model points ADD-s uses a k-d tree instead of a dense scan.
BRUTE_FORCE_LIMIT = 5000
_CHUNK = 512


def add_metric(model: PointCloud, gt: RigidTransform, est: RigidTransform) -> float:
    """Mean distance between corresponding model points under the two poses."""
    return float(np.mean(np.linalg.norm(gt.apply(model.points) - est.apply(model.points), axis=1)))


def _nearest_distances(queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    if len(targets) > BRUTE_FORCE_LIMIT:
        distances, _ = cKDTree(targets).query(queries)
        return distances
    out = np.empty(len(queries))
    for lo in range(0, len(queries), _CHUNK):
        block = queries[lo:lo + _CHUNK]
        diff = block[:, None, :] - targets[None, :, :]
        out[lo:lo + _CHUNK] = np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff), axis=1))
    return out


def adds_metric(model: PointCloud, gt: RigidTransform, est: RigidTransform) -> float:
    """Mean distance from each gt-posed point to the closest est-posed point."""
    return float(np.mean(_nearest_distances(gt.apply(model.points), est.apply(model.points))))


def adds_or_add(model: PointCloud, gt: RigidTransform, est: RigidTransform, symmetric: bool) -> float:
    """ADD(s): ADD-s for symmetric objects, ADD otherwise."""
    return adds_metric(model, gt, est) if symmetric else add_metric(model, gt, est)


def accuracy_at_threshold(values, object_radius: float, fraction: float = 0.10) -> float:
    """Share of distances strictly below ``fraction`` of the object radius."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise SizeError("No distances to score")
    if not fraction > 0:
        raise ParameterError(f"Threshold fraction must be positive, got {fraction}")
    return float(np.mean(values < fraction * object_radius))


def auc_metric(add_values, max_threshold: float = 100.0) -> float:
    """Area under the accuracy-vs-threshold curve over [0, max_threshold], normalised.

    Exact integral of the empirical step function: each distance d contributes
    max(0, 1 - d / max_threshold).
    """
    values = np.asarray(add_values, dtype=np.float64)
    if values.size == 0:
        raise SizeError("No distances to score")
    if not max_threshold > 0:
        raise ParameterError(f"AUC threshold must be positive, got {max_threshold}")
    return float(np.mean(np.clip(1.0 - values / max_threshold, 0.0, 1.0)))


@dataclass
class EvalReport:
    add_values: list = field(default_factory=list)
    accuracy_at_threshold: float = 0.0
    auc: float = 0.0
    mean_kp_error: float = float("nan")
    kp_error_std: float = float("nan")
    rows: list = field(default_factory=list)
    groups: list = field(default_factory=list)
    experiment: str = ""

    @classmethod
    def from_values(
        cls,
        add_values,
        kp_errors,
        object_radius: float,
        fraction: float = 0.10,
        auc_max: float = 100.0,
    ) -> "EvalReport":
        add_values = [float(v) for v in add_values]
        kp_errors = np.asarray(kp_errors, dtype=np.float64)
        report = cls(add_values=add_values)
        if add_values:
            report.accuracy_at_threshold = accuracy_at_threshold(add_values, object_radius, fraction)
            report.auc = auc_metric(add_values, auc_max)
        if kp_errors.size:
            report.mean_kp_error = float(kp_errors.mean())
            report.kp_error_std = float(kp_errors.std())
        return report
