"""Experiment runner: trials over objects, keypoint sets, schemes and resolutions.

Every trial draws from its own seed sequence keyed on (seed, object, trial),
so rows do not depend on how trials are scheduled across threads.
"""

from __future__ import annotations

import itertools
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from accumulator.peaks import find_peak, merge_grids
from accumulator.voting import VoteStats, cast_votes
from core.errors import ParameterError
from geometry.keypoints import bbox_keypoints, disperse_keypoints, fps_keypoints
from geometry.types import KeypointSet, RigidTransform
from vote_maps.noise import apply_noise
from .estimation import (
    Localization,
    grid_for_map,
    keypoint_errors,
    localize_keypoint,
    oracle_padding,
    recover_pose,
    refine_pose,
    voter_points,
)
from .metrics import EvalReport, accuracy_at_threshold, add_metric, adds_metric, auc_metric
from .objects import ModelObject
from .occlusion import half_plane_occlusion
from .scene import random_direction, random_pose, random_rotation, render_frame
from .specs import (
    DISPERSE_BOX_SCALE,
    ENSEMBLE_SCHEMES,
    ExperimentKind,
    ExperimentSpec,
    KeypointSetKind,
)

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "experiment",
    "object",
    "scheme",
    "resolution_mm",
    "scale",
    "K",
    "keypoint_set",
    "trial",
    "seed",
    "eps_mean",
    "eps_std",
    "add",
    "adds",
    "accuracy",
    "auc",
    "votes",
    "drops",
    "wall_ms",
    "mem_bytes",
)
GROUP_KEYS = ("object", "keypoint_set", "scheme", "resolution_mm", "scale", "K")
# extra voxels of padding beyond the farthest voter-to-keypoint distance
PADDING_VOXELS = 2.0


@dataclass
class ObjectContext:
    index: int
    obj: ModelObject
    keypoints: dict


def trial_seed_sequence(seed: int, obj_index: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(obj_index), int(trial)])


def keypoints_for(obj: ModelObject, kind: KeypointSetKind, count: int) -> KeypointSet:
    if kind is KeypointSetKind.SURFACE:
        return fps_keypoints(obj.model, count)
    return bbox_keypoints(obj.model, DISPERSE_BOX_SCALE, count=count, ordered=True)


def _prepare(spec: ExperimentSpec) -> list:
    contexts = []
    most = max(spec.keypoint_count_values)
    for index, object_spec in enumerate(spec.object_specs):
        obj = object_spec.build(spec.model_points, spec.seed)
        keypoints = {kind: keypoints_for(obj, kind, most) for kind in spec.keypoint_set_values}
        contexts.append(ObjectContext(index, obj, keypoints))
        logger.info(f"Prepared object '{obj.name}' (radius {obj.radius:.1f} mm, {len(obj.model)} points)")
    return contexts


def _score(spec, obj: ModelObject, gt: RigidTransform, est: RigidTransform) -> dict:
    add = add_metric(obj.model, gt, est)
    adds = adds_metric(obj.model, gt, est)
    scored = adds if obj.symmetric else add
    return {
        "add": add,
        "adds": adds,
        "accuracy": accuracy_at_threshold([scored], obj.radius, spec.accuracy_fraction),
        "auc": auc_metric([scored], spec.auc_max_mm),
        "_scored": scored,
    }


def _row(spec, ctx, trial, trial_seed, **fields) -> dict:
    row = {
        "experiment": spec.experiment.value,
        "object": ctx.obj.name,
        "scheme": "",
        "resolution_mm": None,
        "scale": None,
        "K": None,
        "keypoint_set": "",
        "trial": trial,
        "seed": trial_seed,
        "votes": 0,
        "drops": 0,
        "wall_ms": None,
        "mem_bytes": 0,
    }
    row.update(fields)
    errors = np.asarray(row.get("_errors", []), dtype=np.float64)
    row["eps_mean"] = float(errors.mean()) if errors.size else None
    row["eps_std"] = float(errors.std()) if errors.size else None
    return row


def _locate(spec, maps, resolution, padding, vote_seed, workers) -> list:
    """One localization per map; with timing on, wall time is the median over repeats."""
    repeats = spec.timing_repeats if spec.times_voting else 1
    cubic = spec.experiment is ExperimentKind.RESOLUTION_SWEEP
    found = []
    for j, vote_map in enumerate(maps):
        runs = [
            localize_keypoint(
                vote_map,
                resolution,
                padding,
                sample=spec.vote_sample,
                seed=vote_seed + j,
                workers=workers,
                max_grid_mb=spec.max_grid_mb,
                cubic=cubic,
            )
            for _ in range(repeats)
        ]
        first = runs[0]
        first.stats.wall_ms = statistics.median(r.stats.wall_ms for r in runs)
        found.append(first)
    return found


def _locate_ensemble(spec, maps_by_scheme, resolution, padding, vote_seed, workers) -> dict:
    """Peak per keypoint for every non-empty subset of the ensemble schemes.

    Each scheme votes once into its own grid; subsets are merged sums of
    grids that share one geometry.
    """
    count = len(next(iter(maps_by_scheme.values())))
    grids = {scheme: [] for scheme in ENSEMBLE_SCHEMES}
    stats = {scheme: [] for scheme in ENSEMBLE_SCHEMES}
    for j in range(count):
        template = grid_for_map(maps_by_scheme[ENSEMBLE_SCHEMES[0]][j], resolution, padding, max_grid_mb=spec.max_grid_mb)
        for scheme in ENSEMBLE_SCHEMES:
            grid = template.empty_like()
            stats[scheme].append(
                cast_votes(grid, maps_by_scheme[scheme][j], sample=spec.vote_sample, seed=vote_seed + j, workers=workers)
            )
            grids[scheme].append(grid)

    combos = {}
    for size in range(1, len(ENSEMBLE_SCHEMES) + 1):
        for combo in itertools.combinations(ENSEMBLE_SCHEMES, size):
            found = []
            for j in range(count):
                merged = merge_grids([grids[s][j] for s in combo])
                total = VoteStats()
                for s in combo:
                    total = total.merge(stats[s][j])
                found.append(Localization(find_peak(merged), total, merged.memory_bytes))
            combos["+".join(s.value for s in combo)] = found
    return combos


def _rows_for_estimates(spec, ctx, trial, trial_seed, label, keypoints, kind, resolution, found, truth, pose, scene):
    estimated = np.array([f.location for f in found])
    errors = keypoint_errors(estimated, truth)
    rows = []
    for count in spec.keypoint_count_values:
        subset = found[:count]
        est_pose = recover_pose(keypoints.subset(count), estimated[:count])
        common = {
            "resolution_mm": resolution,
            "scale": keypoints.dispersion_scale,
            "K": count,
            "keypoint_set": kind.value,
            "votes": sum(f.stats.votes for f in subset),
            "drops": sum(f.stats.dropped for f in subset),
            "wall_ms": sum(f.stats.wall_ms for f in subset) if spec.times_voting else None,
            "mem_bytes": max(f.mem_bytes for f in subset),
            "_extent_mm": max((f.extent_mm for f in subset if f.extent_mm is not None), default=None),
            "_errors": errors[:count].tolist(),
        }
        rows.append(
            _row(spec, ctx, trial, trial_seed, scheme=label, **common, **_score(spec, ctx.obj, pose, est_pose))
        )
        if spec.icp:
            refined = refine_pose(ctx.obj.model, scene, est_pose, resolution)
            rows.append(
                _row(
                    spec, ctx, trial, trial_seed, scheme=f"{label}+icp", **common, **_score(spec, ctx.obj, pose, refined)
                )
            )
    return rows


def _voting_trial(spec: ExperimentSpec, ctx: ObjectContext, trial: int, workers: int = 1) -> list:
    sequence = trial_seed_sequence(spec.seed, ctx.index, trial)
    trial_seed = int(sequence.generate_state(1)[0])
    rng = np.random.default_rng(sequence)
    pose = random_pose(rng, ctx.obj)
    ensemble = spec.experiment is ExperimentKind.ENSEMBLE
    schemes = ENSEMBLE_SCHEMES if ensemble else spec.schemes
    with_background = spec.noise.mask_flip_rate > 0.0

    rows = []
    for kind in spec.keypoint_set_values:
        keypoints = ctx.keypoints[kind]
        frame = render_frame(ctx.obj, pose, keypoints, schemes, with_background=with_background)
        # identical noise seeds for every scheme so the schemes see matched perturbations
        noise_seeds = rng.integers(0, 2**32, size=len(keypoints))
        vote_seed = int(rng.integers(0, 2**31))
        mask = frame.mask
        if spec.occlusion > 0.0:
            mask = half_plane_occlusion(mask, spec.occlusion, rng)

        noisy = {}
        for scheme in schemes:
            maps = frame.maps_for(scheme)
            if spec.occlusion > 0.0:
                maps = [m.with_mask(mask) for m in maps]
            noisy[scheme] = [apply_noise(m, spec.noise.spec_for(scheme, noise_seeds[j])) for j, m in enumerate(maps)]

        reference = noisy[schemes[0]]
        base_padding = oracle_padding(reference)
        scene = voter_points(reference[0]) if spec.icp else None
        truth = frame.camera_keypoints

        sweep = spec.experiment is ExperimentKind.RESOLUTION_SWEEP
        for resolution in spec.resolutions:
            # the sweep keeps one extent across resolutions so memory follows the voxel count alone
            padding = base_padding + PADDING_VOXELS * (max(spec.resolutions) if sweep else resolution)
            if ensemble:
                located = _locate_ensemble(spec, noisy, resolution, padding, vote_seed, workers)
            else:
                located = {
                    scheme.value: _locate(spec, noisy[scheme], resolution, padding, vote_seed, workers)
                    for scheme in schemes
                }
            for label, found in located.items():
                rows.extend(
                    _rows_for_estimates(
                        spec, ctx, trial, trial_seed, label, keypoints, kind, resolution, found, truth, pose, scene
                    )
                )
    return rows


def _dispersion_trial(spec: ExperimentSpec, ctx: ObjectContext, trial: int, workers: int = 1) -> list:
    """Fixed perturbations on keypoints pushed out to growing multiples of the radius."""
    sequence = trial_seed_sequence(spec.seed, ctx.index, trial)
    trial_seed = int(sequence.generate_state(1)[0])
    rng = np.random.default_rng(sequence)
    obj = ctx.obj
    translation = random_direction(rng, 1)[0] * rng.uniform(0.0, 0.5 * obj.radius)
    pose = RigidTransform(random_rotation(rng), translation)

    rows = []
    for kind in spec.keypoint_set_values:
        base = ctx.keypoints[kind]
        for count in spec.keypoint_count_values:
            subset = base.subset(count)
            perturbation = random_direction(rng, count) * spec.perturbation_mm
            for scale in spec.scale_values:
                dispersed = disperse_keypoints(subset, obj.centroid, scale, obj.radius)
                estimated = pose.apply(dispersed.keypoints) + perturbation
                est_pose = recover_pose(dispersed, estimated)
                errors = np.linalg.norm(perturbation, axis=1)
                rows.append(
                    _row(
                        spec,
                        ctx,
                        trial,
                        trial_seed,
                        scheme="perturbed",
                        scale=float(scale),
                        K=count,
                        keypoint_set=kind.value,
                        _errors=errors.tolist(),
                        **_score(spec, obj, pose, est_pose),
                    )
                )
    return rows


def _group_rows(spec: ExperimentSpec, rows: list, radii: dict) -> list:
    groups = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in GROUP_KEYS), []).append(row)
    summaries = []
    for key, members in groups.items():
        errors = np.concatenate([np.asarray(r["_errors"], dtype=np.float64) for r in members])
        scored = [r["_scored"] for r in members]
        walls = [r["wall_ms"] for r in members if r["wall_ms"] is not None]
        summary = dict(zip(GROUP_KEYS, key))
        summary.update(
            {
                "trials": len(members),
                "eps_mu": float(errors.mean()),
                "eps_sigma": float(errors.std()),
                "add_mean": float(np.mean([r["add"] for r in members])),
                "adds_mean": float(np.mean([r["adds"] for r in members])),
                "accuracy": accuracy_at_threshold(scored, radii[key[0]], spec.accuracy_fraction),
                "auc": auc_metric(scored, spec.auc_max_mm),
                "votes": int(sum(r["votes"] for r in members)),
                "drops": int(sum(r["drops"] for r in members)),
                "wall_ms_median": statistics.median(walls) if walls else None,
                "mem_bytes": max(r["mem_bytes"] for r in members),
            }
        )
        summaries.append(summary)
    return summaries


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> EvalReport:
    """Run every trial of ``spec`` and collect per-trial rows plus group summaries.

    Trials run on ``workers`` threads unless voting is being timed, in which
    case trials run one at a time and the threads shard each map's votes.
    """
    if workers < 1:
        raise ParameterError(f"workers must be at least 1, got {workers}")
    contexts = _prepare(spec)
    trial_fn = _dispersion_trial if spec.experiment is ExperimentKind.DISPERSION_SWEEP else _voting_trial
    jobs = [(ctx, trial) for ctx in contexts for trial in range(spec.trials)]
    logger.info(f"Running {spec.experiment.value}: {len(jobs)} trials over {len(contexts)} objects")

    if spec.times_voting or workers == 1:
        results = [trial_fn(spec, ctx, trial, workers) for ctx, trial in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: trial_fn(spec, job[0], job[1], 1), jobs))

    rows = [row for trial_rows in results for row in trial_rows]
    radii = {ctx.obj.name: ctx.obj.radius for ctx in contexts}
    errors = np.concatenate([np.asarray(r["_errors"], dtype=np.float64) for r in rows]) if rows else np.array([])
    report = EvalReport(
        add_values=[float(r["_scored"]) for r in rows],
        accuracy_at_threshold=float(np.mean([r["accuracy"] for r in rows])) if rows else 0.0,
        auc=float(np.mean([r["auc"] for r in rows])) if rows else 0.0,
        mean_kp_error=float(errors.mean()) if errors.size else float("nan"),
        kp_error_std=float(errors.std()) if errors.size else float("nan"),
        rows=rows,
        groups=_group_rows(spec, rows, radii),
        experiment=spec.experiment.value,
    )
    logger.info(
        f"{spec.experiment.value} finished: {len(rows)} rows, mean keypoint error {report.mean_kp_error:.3f} mm"
    )
    return report


def scheme_ranking(report: EvalReport, keypoint_set: str | None = None) -> list:
    """Schemes ordered by mean keypoint error, pooled over objects and resolutions."""
    pooled = {}
    for row in report.rows:
        if keypoint_set and row["keypoint_set"] != keypoint_set:
            continue
        if row["scheme"].endswith("+icp"):
            continue
        pooled.setdefault(row["scheme"], []).extend(row["_errors"])
    return sorted(pooled, key=lambda s: float(np.mean(pooled[s])))
