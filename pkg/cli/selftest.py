"""Oracle-equivalence suites run by ``radvote selftest``.

Each suite compares a fast implementation against an exhaustive or naive
oracle on small random instances.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from accumulator import kernels
from geometry.horn import horn_solve, residuals
from geometry.types import PointCloud, RigidTransform
from pose_pipeline.metrics import add_metric, adds_metric, auc_metric

logger = logging.getLogger(__name__)

SELFTEST_DIMS = (24, 20, 22)
HORN_TOLERANCE_MM = 1e-9
METRIC_TOLERANCE = 1e-9
AUC_TOLERANCE = 1e-3
AUC_SAMPLES = 10_000


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checked: int
    failures: int
    seconds: float
    detail: str = ""


def _voxel_lower_corners(dims):
    nx, ny, nz = dims
    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    return i.astype(np.float64), j.astype(np.float64), k.astype(np.float64)


def brute_force_sphere(dims, center, radius, half_width=kernels.ANNULUS_HALF_WIDTH) -> np.ndarray:
    """Counts (nz, ny, nx) from an exhaustive scan of every slice's annulus test.

    Every voxel is tested: its slice offset dz fixes the slice circle
    sqrt(r^2 - dz^2) of the half-voxel-rounded radius, and the voxel is hit
    when its centre's in-plane distance lies in [max(R - w, 0), R + w).
    """
    i, j, k = _voxel_lower_corners(dims)
    r = np.floor(2.0 * float(radius) + 0.5) / 2.0
    dx = i + 0.5 - center[0]
    dy = j + 0.5 - center[1]
    dz = k + 0.5 - center[2]
    d2 = dx * dx + dy * dy
    slice2 = r * r - dz * dz
    on_sphere = slice2 >= 0.0
    slice_radius = np.sqrt(np.where(on_sphere, slice2, 0.0))
    inner = np.maximum(slice_radius - half_width, 0.0)
    outer = slice_radius + half_width
    hit = on_sphere & (inner * inner <= d2) & (d2 < outer * outer)
    return hit.astype(np.uint32)


def brute_force_ray(dims, origin, direction) -> np.ndarray:
    """Counts marking every voxel the half-line crosses for a positive length."""
    i, j, k = _voxel_lower_corners(dims)
    t_enter = np.zeros_like(i)
    t_exit = np.full_like(i, np.inf)
    for lo, o, d in ((i, origin[0], direction[0]), (j, origin[1], direction[1]), (k, origin[2], direction[2])):
        if d == 0.0:
            outside = (o < lo) | (o > lo + 1.0)
            t_exit = np.where(outside, -np.inf, t_exit)
            continue
        ta = (lo - o) / d
        tb = (lo + 1.0 - o) / d
        t_enter = np.maximum(t_enter, np.minimum(ta, tb))
        t_exit = np.minimum(t_exit, np.maximum(ta, tb))
    return (t_enter < t_exit).astype(np.uint32)


def sphere_kernel(dims, center, radius, half_width=kernels.ANNULUS_HALF_WIDTH) -> np.ndarray:
    nx, ny, nz = dims
    counts = np.zeros((nz, ny, nx), dtype=np.uint32)
    kernels.cast_sphere(counts, float(center[0]), float(center[1]), float(center[2]), float(radius), float(half_width))
    return counts


def ray_kernel(dims, origin, direction) -> np.ndarray:
    nx, ny, nz = dims
    counts = np.zeros((nz, ny, nx), dtype=np.uint32)
    kernels.cast_ray(counts, np.asarray(origin, dtype=np.float64), np.asarray(direction, dtype=np.float64))
    return counts


def _random_sphere(rng, dims):
    extent = np.asarray(dims, dtype=np.float64)
    center = rng.uniform(-0.25, 1.25, size=3) * extent
    radius = rng.uniform(0.3, 0.75 * extent.max())
    return center, radius


def _random_ray(rng, dims):
    extent = np.asarray(dims, dtype=np.float64)
    origin = rng.uniform(-0.5, 1.5, size=3) * extent
    direction = rng.normal(size=3)
    if rng.random() < 0.2:
        direction[rng.integers(3)] = 0.0
    return origin, direction / np.linalg.norm(direction)


def check_sphere_rasterizer(rng, instances: int, dims=SELFTEST_DIMS, rasterizer=sphere_kernel) -> SuiteResult:
    start = time.perf_counter()
    failures = 0
    for _ in range(instances):
        center, radius = _random_sphere(rng, dims)
        if not np.array_equal(rasterizer(dims, center, radius), brute_force_sphere(dims, center, radius)):
            failures += 1
    return SuiteResult("sphere_rasterizer", failures == 0, instances, failures, time.perf_counter() - start)


def check_ray_rasterizer(rng, instances: int, dims=SELFTEST_DIMS) -> SuiteResult:
    start = time.perf_counter()
    failures = 0
    for _ in range(instances):
        origin, direction = _random_ray(rng, dims)
        if not np.array_equal(ray_kernel(dims, origin, direction), brute_force_ray(dims, origin, direction)):
            failures += 1
    return SuiteResult("ray_rasterizer", failures == 0, instances, failures, time.perf_counter() - start)


def check_horn(rng, instances: int) -> SuiteResult:
    start = time.perf_counter()
    failures = 0
    worst = 0.0
    for _ in range(instances):
        truth = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.uniform(-500.0, 500.0, size=3))
        src = rng.uniform(-100.0, 100.0, size=(int(rng.integers(3, 12)), 3))
        recovered = horn_solve(src, truth.apply(src))
        error = float(residuals(recovered, src, truth.apply(src)).max())
        worst = max(worst, error)
        failures += int(error >= HORN_TOLERANCE_MM)
    return SuiteResult("horn_roundtrip", failures == 0, instances, failures, time.perf_counter() - start, f"max residual {worst:.2e} mm")


def _naive_add(points, gt, est):
    return sum(np.linalg.norm(gt.apply(p) - est.apply(p)) for p in points) / len(points)


def _naive_adds(points, gt, est):
    moved_gt = gt.apply(points)
    moved_est = est.apply(points)
    total = 0.0
    for p in moved_gt:
        total += min(np.linalg.norm(p - q) for q in moved_est)
    return total / len(points)


def _sampled_auc(values, max_threshold):
    thresholds = (np.arange(AUC_SAMPLES) + 0.5) * (max_threshold / AUC_SAMPLES)
    values = np.asarray(values)
    return float(np.mean([(values < t).mean() for t in thresholds]))


def check_metrics(rng, instances: int) -> SuiteResult:
    start = time.perf_counter()
    failures = 0
    for _ in range(instances):
        model = PointCloud(rng.normal(scale=50.0, size=(int(rng.integers(20, 80)), 3)))
        gt = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.uniform(-100, 100, size=3))
        est = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.uniform(-100, 100, size=3))
        if abs(add_metric(model, gt, est) - _naive_add(model.points, gt, est)) > METRIC_TOLERANCE:
            failures += 1
        if abs(adds_metric(model, gt, est) - _naive_adds(model.points, gt, est)) > METRIC_TOLERANCE:
            failures += 1
        distances = rng.uniform(0.0, 150.0, size=int(rng.integers(1, 40)))
        if abs(auc_metric(distances, 100.0) - _sampled_auc(distances, 100.0)) > AUC_TOLERANCE:
            failures += 1
    return SuiteResult("metric_oracles", failures == 0, 3 * instances, failures, time.perf_counter() - start)


def run_selftest(seed: int = 0, instances: int = 25, mutate_annulus: float | None = None) -> list:
    """Run every suite; ``mutate_annulus`` runs the sphere kernel with that annulus half-width instead of 0.5."""
    rng = np.random.default_rng(seed)
    rasterizer = sphere_kernel
    if mutate_annulus is not None:
        logger.warning(f"Sphere kernel annulus half-width corrupted to {mutate_annulus}")

        def rasterizer(dims, center, radius):
            return sphere_kernel(dims, center, radius, mutate_annulus)

    results = [
        check_sphere_rasterizer(rng, instances, rasterizer=rasterizer),
        check_ray_rasterizer(rng, instances),
        check_horn(rng, 10 * instances),
        check_metrics(rng, max(1, instances // 5)),
    ]
    for result in results:
        log = logger.info if result.passed else logger.error
        log(f"selftest {result.name}: {result.checked - result.failures}/{result.checked} passed {result.detail}")
    return results
