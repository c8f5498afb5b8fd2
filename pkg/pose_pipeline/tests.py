import dataclasses
from unittest import mock

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from scipy.spatial.transform import Rotation

from accumulator.grid import memory_for_extent
from core.errors import ParameterError, RankError, SizeError
from geometry.types import CameraIntrinsics, KeypointSet, PointCloud, RigidTransform, SelectionMethod
from pose_pipeline import metrics
from pose_pipeline.estimation import (
    PoseEstimate,
    estimate_keypoints,
    grid_for_map,
    keypoint_errors,
    localize_keypoint,
    recover_pose,
)
from pose_pipeline.experiments import CSV_COLUMNS, keypoints_for, run_experiment, scheme_ranking
from pose_pipeline.metrics import EvalReport, accuracy_at_threshold, add_metric, adds_metric, auc_metric
from pose_pipeline.objects import PRESETS, ModelObject, preset_object, synthetic_model
from pose_pipeline.occlusion import OcclusionMode, dropout_occlusion, half_plane_occlusion, occlude_maps
from pose_pipeline.scene import DEPTH_RANGE_MM, random_pose, render_frame
from pose_pipeline.specs import (
    ExperimentKind,
    ExperimentSpec,
    KeypointSetKind,
    NoiseConfig,
    ObjectSpec,
)
from vote_maps.schemes import SchemeKind

RING = ObjectSpec("ring", shape="sphere_shell", radius_mm=40.0)
NOISELESS = NoiseConfig.from_profile("none")


def random_transform(rng, spread=100.0):
    return RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.uniform(-spread, spread, size=3))


def cylinder(angles=36, heights=5, radius=30.0, length=80.0):
    theta = np.arange(angles) * 2.0 * np.pi / angles
    z = np.linspace(-length / 2, length / 2, heights)
    t, h = np.meshgrid(theta, z)
    return PointCloud(np.stack([radius * np.cos(t).ravel(), radius * np.sin(t).ravel(), h.ravel()], axis=1))


def small_spec(**overrides):
    settings = {
        "objects": (RING,),
        "noise": NOISELESS,
        "trials": 2,
        "seed": 5,
        "vote_sample": 80,
        "model_points": 600,
        "resolutions_mm": (5.0,),
    }
    settings.update(overrides)
    return ExperimentSpec(**settings)


def mean_error(report, **match):
    errors = [e for row in report.rows if all(row[k] == v for k, v in match.items()) for e in row["_errors"]]
    return float(np.mean(errors))


class MetricTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.model = PointCloud(rng.normal(scale=40.0, size=(300, 3)))
        self.gt = random_transform(rng)

    def test_identical_poses(self):
        self.assertEqual(add_metric(self.model, self.gt, self.gt), 0.0)
        self.assertEqual(adds_metric(self.model, self.gt, self.gt), 0.0)

    def test_pure_translation(self):
        shifted = RigidTransform(self.gt.rotation, self.gt.translation + [7.5, 0.0, 0.0])
        self.assertAlmostEqual(add_metric(self.model, self.gt, shifted), 7.5, delta=1e-9)

    def test_add_matches_naive_loop_and_is_symmetric(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            gt, est = random_transform(rng), random_transform(rng)
            naive = sum(np.linalg.norm(gt.apply(p) - est.apply(p)) for p in self.model.points) / len(self.model)
            self.assertAlmostEqual(add_metric(self.model, gt, est), naive, delta=1e-9)
            self.assertAlmostEqual(add_metric(self.model, gt, est), add_metric(self.model, est, gt), delta=1e-9)

    def test_adds_never_exceeds_add(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            model = PointCloud(rng.normal(scale=30.0, size=(int(rng.integers(10, 200)), 3)))
            gt, est = random_transform(rng), random_transform(rng)
            self.assertLessEqual(adds_metric(model, gt, est), add_metric(model, gt, est) + 1e-12)

    def test_symmetric_cylinder(self):
        model = cylinder()
        spin = RigidTransform(Rotation.from_euler("z", 30, degrees=True).as_matrix(), np.zeros(3))
        gt = RigidTransform(np.eye(3), [0.0, 0.0, 800.0])
        est = gt.compose(spin)
        self.assertLess(adds_metric(model, gt, est), 1e-9)
        self.assertGreater(add_metric(model, gt, est), 10.0)

    def test_spatial_index_agrees_with_dense_scan(self):
        rng = np.random.default_rng(3)
        model = PointCloud(rng.normal(scale=50.0, size=(400, 3)))
        gt, est = random_transform(rng), random_transform(rng)
        dense = adds_metric(model, gt, est)
        with mock.patch.object(metrics, "BRUTE_FORCE_LIMIT", 10):
            indexed = adds_metric(model, gt, est)
        self.assertAlmostEqual(dense, indexed, delta=1e-9)

    def test_accuracy_threshold_is_strict(self):
        self.assertEqual(accuracy_at_threshold([0.0, 0.0], 50.0), 1.0)
        self.assertEqual(accuracy_at_threshold([5.0], 50.0, 0.1), 0.0)
        self.assertEqual(accuracy_at_threshold([4.999, 5.0, 6.0, 1.0], 50.0, 0.1), 0.5)

    def test_accuracy_matches_counting(self):
        values = np.random.default_rng(4).uniform(0.0, 20.0, size=97)
        expected = sum(1 for v in values if v < 0.1 * 82.5) / len(values)
        self.assertAlmostEqual(accuracy_at_threshold(values, 82.5), expected, delta=1e-12)

    def test_empty_inputs(self):
        with self.assertRaises(SizeError):
            accuracy_at_threshold([], 10.0)
        with self.assertRaises(SizeError):
            auc_metric([])
        with self.assertRaises(ParameterError):
            auc_metric([1.0], 0.0)

    def test_auc_trivial_values(self):
        self.assertEqual(auc_metric([0.0, 0.0, 0.0]), 1.0)
        self.assertAlmostEqual(auc_metric([50.0], 100.0), 0.5, delta=1e-12)
        self.assertEqual(auc_metric([250.0], 100.0), 0.0)

    def test_auc_matches_sampled_integration(self):
        rng = np.random.default_rng(5)
        thresholds = (np.arange(10_000) + 0.5) * 0.01
        for _ in range(5):
            values = rng.uniform(0.0, 140.0, size=int(rng.integers(1, 30)))
            sampled = np.mean([(values < t).mean() for t in thresholds])
            self.assertAlmostEqual(auc_metric(values, 100.0), sampled, delta=1e-3)

    def test_auc_is_monotone(self):
        values = np.array([10.0, 40.0, 90.0])
        better = values.copy()
        better[1] = 20.0
        self.assertGreater(auc_metric(better), auc_metric(values))

    def test_report_from_values(self):
        report = EvalReport.from_values([1.0, 3.0, 30.0], [1.0, 2.0, 3.0], 61.2)
        self.assertAlmostEqual(report.accuracy_at_threshold, 2.0 / 3.0)
        self.assertAlmostEqual(report.mean_kp_error, 2.0)
        self.assertTrue(0.0 <= report.auc <= 1.0)


class PoseRecoveryTests(SimpleTestCase):
    def setUp(self):
        self.keypoints = KeypointSet(
            [[30.0, 0.0, 0.0], [0.0, 40.0, 0.0], [0.0, 0.0, 25.0], [-10.0, -10.0, 10.0]], SelectionMethod.FPS
        )

    def test_noiseless_round_trip(self):
        pose = random_transform(np.random.default_rng(6), 500.0)
        recovered = recover_pose(self.keypoints, pose.apply(self.keypoints.keypoints))
        assert_allclose(recovered.rotation, pose.rotation, atol=1e-9)
        assert_allclose(recovered.translation, pose.translation, atol=1e-9)

    def test_collinear_keypoints(self):
        line = KeypointSet([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]], SelectionMethod.SCALED_BBOX)
        with self.assertRaises(RankError):
            recover_pose(line, line.keypoints)

    def test_keypoint_errors(self):
        assert_allclose(keypoint_errors([[0.0, 0.0, 3.0], [1.0, 1.0, 1.0]], [[0.0, 4.0, 0.0], [1.0, 1.0, 1.0]]), [5.0, 0.0])
        with self.assertRaises(SizeError):
            keypoint_errors([[0.0, 0.0, 0.0]], [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])

    def test_pose_estimate_rejects_negative_errors(self):
        with self.assertRaises(ValueError):
            PoseEstimate(RigidTransform.identity(), [0.5, -0.1, 0.2], SchemeKind.RADIAL)


class KeypointEstimationTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(8)
        self.obj = preset_object("ape", count=1500, seed=1)
        self.pose = random_pose(rng, self.obj)
        self.keypoints = keypoints_for(self.obj, KeypointSetKind.DISPERSE, 8)

    def test_noiseless_radial_within_resolution(self):
        frame = render_frame(self.obj, self.pose, self.keypoints.subset(3), ["radial"])
        estimates = estimate_keypoints(frame.frame, frame.maps_for("radial"), 4.0, sample=150, seed=2)
        errors = keypoint_errors(estimates.keypoints, frame.camera_keypoints)
        self.assertTrue(np.all(errors <= 4.0), errors)
        self.assertEqual(estimates.stats.votes, 3 * 150)
        self.assertGreater(estimates.mem_bytes, 0)

    def test_voting_is_independent_per_keypoint(self):
        frame = render_frame(self.obj, self.pose, self.keypoints, ["offset"])
        maps = frame.maps_for("offset")
        three = estimate_keypoints(None, maps[:3], 5.0, sample=100, seed=4)
        eight = estimate_keypoints(None, maps, 5.0, sample=100, seed=4)
        assert_array_equal(three.keypoints, eight.keypoints[:3])

    def test_needs_three_maps(self):
        frame = render_frame(self.obj, self.pose, self.keypoints.subset(3), ["radial"])
        with self.assertRaises(SizeError):
            estimate_keypoints(None, frame.maps_for("radial")[:2], 5.0)

    def test_default_grid_ignores_the_true_keypoint(self):
        frame = render_frame(self.obj, self.pose, self.keypoints.subset(3), ["vector", "polar"])
        for scheme in ("vector", "polar"):
            vote_map = frame.maps_for(scheme)[0]
            blind = dataclasses.replace(vote_map, keypoint=None)
            moved = dataclasses.replace(vote_map, keypoint=vote_map.keypoint + 1000.0)
            grids = [grid_for_map(m, 8.0) for m in (vote_map, blind, moved)]
            for grid in grids[1:]:
                assert_array_equal(grid.origin, grids[0].origin)
                self.assertEqual(grid.dims, grids[0].dims)

    def test_grid_memory_guard(self):
        frame = render_frame(self.obj, self.pose, self.keypoints.subset(3), ["vector"])
        vote_map = frame.maps_for("vector")[0]
        with self.assertRaises(ParameterError):
            grid_for_map(vote_map, 1.0, max_grid_mb=0.01)
        located = localize_keypoint(vote_map, 8.0, sample=60)
        self.assertEqual(located.mem_bytes % 4, 0)
        self.assertEqual(located.stats.votes, 60)


class ObjectAndSceneTests(SimpleTestCase):
    def test_synthetic_radius(self):
        for shape in ("sphere_shell", "box_shell", "l_bracket"):
            cloud = synthetic_model(shape, 61.2, count=500, seed=3)
            self.assertAlmostEqual(cloud.radius, 61.2, delta=1e-9)
            assert_allclose(cloud.centroid, 0.0, atol=1e-9)

    def test_unknown_shape(self):
        with self.assertRaises(ParameterError):
            synthetic_model("torus", 10.0)
        with self.assertRaises(ParameterError):
            ObjectSpec("x", shape="torus", radius_mm=10.0)
        with self.assertRaises(ParameterError):
            ObjectSpec("x", path="model.ply")

    def test_presets(self):
        self.assertEqual(set(PRESETS), {"ape", "driller", "eggbox"})
        eggbox = ObjectSpec.preset("eggbox").build(400)
        self.assertIsInstance(eggbox, ModelObject)
        self.assertTrue(eggbox.symmetric)
        self.assertAlmostEqual(eggbox.radius, 82.5, delta=1e-9)

    def test_random_pose_places_centroid_in_range(self):
        rng = np.random.default_rng(9)
        obj = preset_object("driller", count=300)
        for _ in range(20):
            center = random_pose(rng, obj).apply(obj.centroid)
            self.assertTrue(DEPTH_RANGE_MM[0] <= center[2] <= DEPTH_RANGE_MM[1])

    def test_render_frame_shares_one_mask(self):
        obj = preset_object("ape", count=800)
        pose = random_pose(np.random.default_rng(10), obj)
        keypoints = keypoints_for(obj, KeypointSetKind.SURFACE, 3)
        frame = render_frame(obj, pose, keypoints, ["radial", "polar"], intrinsics=CameraIntrinsics.linemod())
        assert_array_equal(frame.maps_for("radial")[0].mask, frame.maps_for("polar")[2].mask)
        self.assertEqual(frame.frame.depth.shape, (480, 640))


class OcclusionTests(SimpleTestCase):
    def setUp(self):
        self.mask = np.zeros((40, 50), dtype=bool)
        self.mask[5:35, 10:40] = True

    def test_half_plane_hides_requested_share(self):
        occluded = half_plane_occlusion(self.mask, 0.3, np.random.default_rng(0))
        self.assertEqual(int(occluded.sum()), 900 - 270)
        self.assertFalse(np.any(occluded & ~self.mask))

    def test_reproducible(self):
        first = dropout_occlusion(self.mask, 0.5, np.random.default_rng(1))
        second = dropout_occlusion(self.mask, 0.5, np.random.default_rng(1))
        assert_array_equal(first, second)
        self.assertEqual(int(first.sum()), 450)

    def test_fraction_range(self):
        with self.assertRaises(ParameterError):
            half_plane_occlusion(self.mask, 1.0, np.random.default_rng(0))

    def test_occlude_maps_uses_one_cut(self):
        obj = preset_object("ape", count=800)
        pose = random_pose(np.random.default_rng(11), obj)
        frame = render_frame(obj, pose, keypoints_for(obj, KeypointSetKind.SURFACE, 3), ["offset"])
        maps = occlude_maps(frame.maps_for("offset"), 0.4, np.random.default_rng(2), OcclusionMode.DROPOUT)
        for vote_map in maps[1:]:
            assert_array_equal(vote_map.mask, maps[0].mask)
        self.assertLess(int(maps[0].mask.sum()), int(frame.mask.sum()))
        assert_array_equal(maps[0].values[~maps[0].mask], 0.0)


class ExperimentSpecTests(SimpleTestCase):
    def test_defaults_per_experiment(self):
        sweep = ExperimentSpec(experiment="resolution_sweep")
        self.assertEqual(sweep.resolutions, (1.0, 2.0, 4.0, 5.0, 8.0, 16.0))
        self.assertEqual([o.name for o in sweep.object_specs], ["ape"])
        self.assertTrue(sweep.times_voting)
        dispersion = ExperimentSpec(experiment=ExperimentKind.DISPERSION_SWEEP)
        self.assertEqual(dispersion.scale_values, (1.0, 2.0, 3.0, 4.0, 5.0))
        self.assertEqual(dispersion.keypoint_count_values, (4,))
        comparison = ExperimentSpec()
        self.assertEqual(
            comparison.keypoint_set_values, (KeypointSetKind.SURFACE, KeypointSetKind.DISPERSE)
        )
        self.assertEqual(comparison.resolutions, (5.0,))
        self.assertFalse(comparison.times_voting)
        self.assertEqual(ExperimentSpec(experiment="keypoint_count").keypoint_count_values, (3, 4, 8))

    def test_invalid_spec(self):
        with self.assertRaises(ValueError):
            ExperimentSpec(experiment="bogus")
        with self.assertRaises(ParameterError):
            ExperimentSpec(trials=0)
        with self.assertRaises(ParameterError):
            ExperimentSpec(occlusion=1.0)

    def test_noise_scaling(self):
        calibrated = NoiseConfig.from_profile("calibrated")
        doubled = calibrated.scaled(2.0)
        self.assertEqual(doubled.sigma[SchemeKind.RADIAL], (2.0 * calibrated.sigma[SchemeKind.RADIAL][0],))
        self.assertTrue(calibrated.scaled(0.0).spec_for(SchemeKind.OFFSET, 1).is_zero)

    def test_calibrated_profile_scales_offsets_by_distance(self):
        calibrated = NoiseConfig.from_profile("calibrated")
        self.assertEqual(calibrated.relative, frozenset({SchemeKind.OFFSET}))
        self.assertTrue(calibrated.spec_for(SchemeKind.OFFSET, 1).relative)
        self.assertFalse(calibrated.spec_for(SchemeKind.RADIAL, 1).relative)
        self.assertEqual(calibrated.scaled(2.0).relative, calibrated.relative)
        self.assertEqual(calibrated.to_dict()["relative"], ["offset"])

    def test_to_dict_names_resolved_values(self):
        data = small_spec().to_dict()
        self.assertEqual(data["objects"], [{"name": "ring", "shape": "sphere_shell", "radius_mm": 40.0, "symmetric": False}])
        self.assertEqual(data["noise"]["profile"], "none")
        self.assertEqual(data["keypoint_counts"], [3])


class RunExperimentTests(SimpleTestCase):
    def test_scheme_comparison_rows(self):
        spec = small_spec(schemes=("radial", "offset"))
        report = run_experiment(spec)
        self.assertEqual(len(report.rows), 2 * 2 * 2)
        for row in report.rows:
            self.assertLessEqual(set(CSV_COLUMNS), set(row))
            self.assertTrue(all(e <= 5.0 for e in row["_errors"]), row)
            self.assertIsNone(row["wall_ms"])
            self.assertEqual(row["votes"], 3 * 80)
        self.assertEqual(len(report.groups), 2 * 2)
        self.assertEqual(sorted(scheme_ranking(report)), ["offset", "radial"])

    def test_deterministic_across_threads(self):
        spec = small_spec(schemes=("radial", "vector"), keypoint_sets=("disperse",))
        sequential = run_experiment(spec, workers=1)
        threaded = run_experiment(spec, workers=3)
        self.assertEqual(sequential.rows, threaded.rows)
        self.assertEqual(sequential.groups, threaded.groups)

    def test_trial_rows_do_not_depend_on_trial_count(self):
        short = run_experiment(small_spec(schemes=("offset",), trials=1))
        longer = run_experiment(small_spec(schemes=("offset",), trials=2))
        first_trial = [r for r in longer.rows if r["trial"] == 0]
        self.assertEqual(short.rows, first_trial)

    def test_keypoint_counts_share_maps(self):
        spec = small_spec(experiment="keypoint_count", keypoint_counts=(3, 4), schemes=("radial",), trials=1)
        rows = run_experiment(spec).rows
        by_k = {row["K"]: row for row in rows}
        self.assertEqual(by_k[3]["_errors"], by_k[4]["_errors"][:3])

    def test_ensemble_labels(self):
        spec = small_spec(experiment="ensemble", trials=1)
        labels = {row["scheme"] for row in run_experiment(spec).rows}
        self.assertEqual(
            labels,
            {
                "radial",
                "offset",
                "vector",
                "radial+offset",
                "radial+vector",
                "offset+vector",
                "radial+offset+vector",
            },
        )

    def test_resolution_sweep_records_memory_and_time(self):
        spec = small_spec(
            experiment="resolution_sweep", objects=None, resolutions_mm=(8.0, 16.0), trials=1, timing_repeats=1
        )
        rows = run_experiment(spec).rows
        self.assertEqual({row["object"] for row in rows}, {"ape"})
        memory = {row["resolution_mm"]: row["mem_bytes"] for row in rows}
        self.assertGreater(memory[8.0], memory[16.0])
        self.assertTrue(all(row["wall_ms"] is not None for row in rows))

    def test_occlusion_and_icp_rows(self):
        spec = small_spec(schemes=("offset",), keypoint_sets=("surface",), occlusion=0.3, icp=True, trials=1)
        labels = [row["scheme"] for row in run_experiment(spec).rows]
        self.assertEqual(labels, ["offset", "offset+icp"])

    def test_dispersion_lowers_add_then_levels_off(self):
        spec = ExperimentSpec(
            experiment="dispersion_sweep",
            objects=(ObjectSpec.preset("ape"),),
            trials=100,
            model_points=400,
            seed=2,
        )
        report = run_experiment(spec)
        add_by_scale = {group["scale"]: group["add_mean"] for group in report.groups}
        self.assertEqual(sorted(add_by_scale), [1.0, 2.0, 3.0, 4.0, 5.0])
        self.assertLess(add_by_scale[3.0], add_by_scale[1.0])
        self.assertLess(abs(add_by_scale[5.0] - add_by_scale[4.0]), abs(add_by_scale[2.0] - add_by_scale[1.0]))
        self.assertEqual({row["scheme"] for row in report.rows}, {"perturbed"})
        for row in report.rows:
            assert_allclose(row["_errors"], 1.5)

    def test_invalid_workers(self):
        with self.assertRaises(ParameterError):
            run_experiment(small_spec(), workers=0)


class SchemeAccuracyTests(SimpleTestCase):
    """Whole-experiment outcomes on the preset objects, at reduced trial counts."""

    def test_noiseless_votes_land_within_a_voxel(self):
        spec = ExperimentSpec(
            objects=tuple(ObjectSpec.preset(name) for name in ("ape", "driller", "eggbox")),
            noise=NOISELESS,
            resolutions_mm=(1.0,),
            keypoint_sets=("surface",),
            trials=2,
            seed=4,
            vote_sample=100,
            model_points=1500,
        )
        report = run_experiment(spec)
        self.assertEqual(len(report.groups), 3 * 4)
        for group in report.groups:
            self.assertLessEqual(group["eps_mu"], 1.0, group)

    def test_calibrated_noise_ranks_radial_first(self):
        spec = ExperimentSpec(objects=(ObjectSpec.preset("ape"),), resolutions_mm=(1.0,), trials=8, seed=1)
        report = run_experiment(spec)
        mu = {
            (kind, scheme): mean_error(report, keypoint_set=kind, scheme=scheme)
            for kind in ("surface", "disperse")
            for scheme in ("radial", "polar", "offset", "vector")
        }
        self.assertTrue(1.3 <= mu["disperse", "radial"] <= 2.3, mu)
        for kind in ("surface", "disperse"):
            self.assertEqual(scheme_ranking(report, kind), ["radial", "polar", "offset", "vector"], mu)
        radial_ratio = mu["disperse", "radial"] / mu["surface", "radial"]
        offset_ratio = mu["disperse", "offset"] / mu["surface", "offset"]
        self.assertLess(radial_ratio, offset_ratio, mu)

    def test_resolution_sweep(self):
        spec = ExperimentSpec(
            experiment="resolution_sweep",
            schemes=("radial",),
            noise=NOISELESS,
            trials=4,
            seed=3,
            timing_repeats=3,
            model_points=1500,
        )
        report = run_experiment(spec)
        groups = sorted(report.groups, key=lambda g: g["resolution_mm"])
        self.assertEqual([g["resolution_mm"] for g in groups], [1.0, 2.0, 4.0, 5.0, 8.0, 16.0])
        errors = [g["eps_mu"] for g in groups]
        walls = [g["wall_ms_median"] for g in groups]
        self.assertEqual(errors, sorted(errors))
        self.assertEqual(walls, sorted(walls, reverse=True))

        extents = {}
        for row in report.rows:
            self.assertEqual(row["mem_bytes"], memory_for_extent(row["_extent_mm"], row["resolution_mm"]))
            extents.setdefault(row["trial"], set()).add(row["_extent_mm"])
        self.assertTrue(all(len(trial_extents) == 1 for trial_extents in extents.values()), extents)
        self.assertEqual(memory_for_extent(479.0, 1.0), 4 * 479**3)

    def test_keypoint_count_barely_moves_accuracy(self):
        spec = ExperimentSpec(
            experiment="keypoint_count",
            objects=(ObjectSpec.preset("ape"),),
            schemes=("radial",),
            trials=200,
            seed=6,
            model_points=1500,
        )
        accuracy = {group["K"]: group["accuracy"] for group in run_experiment(spec).groups}
        self.assertEqual(sorted(accuracy), [3, 4, 8])
        self.assertLess(max(accuracy.values()) - min(accuracy.values()), 0.02, accuracy)
