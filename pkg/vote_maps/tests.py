import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from scipy.spatial.transform import Rotation

from core.errors import DegeneracyError, EmptyMaskError, EmptyRenderError, ParameterError, RadvoteError, SizeError
from geometry.camera import backproject
from geometry.types import CameraIntrinsics, KeypointSet, Pixel, PointCloud, RigidTransform, SelectionMethod
from vote_maps.losses import loss_m1, loss_s
from vote_maps.noise import NoiseKind, NoiseSpec, apply_noise
from vote_maps.render import generate_gt_maps, render_depth
from vote_maps.schemes import SchemeKind, VoteMap, compute_scheme_value, polar_to_unit, toward_keypoint

SMALL_CAMERA = CameraIntrinsics(100.0, 100.0, 32.0, 24.0, 64, 48)


def keypoints(*points):
    return KeypointSet(np.array(points, dtype=np.float64), SelectionMethod.FPS)


def random_scene(seed):
    rng = np.random.default_rng(seed)
    model = PointCloud(rng.normal(scale=30.0, size=(3000, 3)))
    pose = RigidTransform(Rotation.random(random_state=rng).as_matrix(), [5.0, -10.0, 800.0])
    kps = keypoints(*rng.normal(scale=60.0, size=(3, 3)))
    return model, pose, kps


class SchemeValueTests(SimpleTestCase):
    def test_three_four_five(self):
        point, keypoint = [0.0, 0.0, 0.0], [3.0, 4.0, 0.0]
        assert_allclose(compute_scheme_value(SchemeKind.RADIAL, point, keypoint), [5.0])
        assert_allclose(compute_scheme_value(SchemeKind.VECTOR, point, keypoint), [-0.6, -0.8, 0.0])
        assert_allclose(compute_scheme_value(SchemeKind.OFFSET, point, keypoint), [-3.0, -4.0, 0.0])

    def test_polar_straight_up(self):
        value = compute_scheme_value(SchemeKind.POLAR, [0.0, 0.0, 0.0], [0.0, 0.0, -1.0])
        self.assertEqual(value[0], 0.0)
        assert_allclose(compute_scheme_value(SchemeKind.VECTOR, [0.0, 0.0, 0.0], [0.0, 0.0, -1.0]), [0.0, 0.0, 1.0])

    def test_scheme_algebra_on_random_pairs(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            point, keypoint = rng.normal(scale=100.0, size=(2, 3))
            radial = compute_scheme_value(SchemeKind.RADIAL, point, keypoint)[0]
            vector = compute_scheme_value(SchemeKind.VECTOR, point, keypoint)
            offset = compute_scheme_value(SchemeKind.OFFSET, point, keypoint)
            polar = compute_scheme_value(SchemeKind.POLAR, point, keypoint)
            assert_allclose(radial * vector, offset, atol=1e-9)
            self.assertAlmostEqual(np.linalg.norm(offset), radial, delta=1e-9)
            assert_allclose(polar_to_unit(polar)[0], vector, atol=1e-9)
            self.assertTrue(0.0 <= polar[0] <= np.pi and -np.pi < polar[1] <= np.pi)

    def test_direction_undefined_on_keypoint(self):
        with self.assertRaises(DegeneracyError):
            compute_scheme_value(SchemeKind.VECTOR, [1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert_allclose(compute_scheme_value(SchemeKind.RADIAL, [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), [0.0])

    def test_rays_point_toward_keypoint(self):
        vector = compute_scheme_value(SchemeKind.VECTOR, [0.0, 0.0, 0.0], [0.0, 5.0, 0.0])
        assert_allclose(toward_keypoint(SchemeKind.VECTOR, vector), [[0.0, 1.0, 0.0]])
        polar = compute_scheme_value(SchemeKind.POLAR, [0.0, 0.0, 0.0], [0.0, 5.0, 0.0])
        assert_allclose(toward_keypoint(SchemeKind.POLAR, polar), [[0.0, 1.0, 0.0]], atol=1e-12)
        with self.assertRaises(ValueError):
            toward_keypoint(SchemeKind.RADIAL, [[1.0]])

    def test_parse(self):
        self.assertIs(SchemeKind.parse("Radial"), SchemeKind.RADIAL)
        with self.assertRaises(ValueError):
            SchemeKind.parse("spherical")

    def test_vote_map_channel_check(self):
        with self.assertRaises(SizeError):
            VoteMap(SchemeKind.OFFSET, np.zeros((4, 4, 1)), np.ones((4, 4), dtype=bool))
        with self.assertRaises(SizeError):
            VoteMap(SchemeKind.RADIAL, np.zeros((4, 4)), np.ones((3, 4), dtype=bool))


class GroundTruthMapTests(SimpleTestCase):
    def test_model_point_on_keypoint(self):
        model = PointCloud([[0.0, 0.0, 1000.0]])
        maps = generate_gt_maps(model, RigidTransform.identity(), keypoints([0.0, 0.0, 1000.0]), SMALL_CAMERA, "radial")
        self.assertEqual(len(maps), 1)
        self.assertEqual(int(maps[0].mask.sum()), 1)
        assert_allclose(maps[0].masked_values, [[0.0]])

    def test_single_point_radial_value(self):
        model = PointCloud([[0.0, 0.0, 1000.0]])
        maps = generate_gt_maps(model, RigidTransform.identity(), keypoints([0.0, 0.0, 1005.0]), SMALL_CAMERA, "radial")
        self.assertTrue(maps[0].mask[24, 32])
        assert_allclose(maps[0].masked_values, [[5.0]])

    def test_values_match_per_pixel_recomputation(self):
        model, pose, kps = random_scene(7)
        intrinsics = CameraIntrinsics.linemod()
        camera_keypoints = pose.apply(kps.keypoints)
        for scheme in SchemeKind:
            maps = generate_gt_maps(model, pose, kps, intrinsics, scheme)
            for vote_map, keypoint in zip(maps, camera_keypoints):
                vs, us = np.nonzero(vote_map.mask)
                for u, v in list(zip(us, vs))[::25]:
                    point = backproject(Pixel(int(u), int(v), vote_map.depth[v, u]), intrinsics)
                    expected = compute_scheme_value(scheme, point, keypoint)
                    assert_allclose(vote_map.values[v, u], expected, atol=1e-6)
                vote_map.check()

    def test_masks_are_shared_across_keypoints(self):
        model, pose, kps = random_scene(9)
        maps = generate_gt_maps(model, pose, kps, CameraIntrinsics.linemod(), SchemeKind.OFFSET)
        for other in maps[1:]:
            assert_array_equal(other.mask, maps[0].mask)
            assert_array_equal(other.depth, maps[0].depth)

    def test_offset_equals_radial_times_vector(self):
        model, pose, kps = random_scene(10)
        intrinsics = CameraIntrinsics.linemod()
        radial = generate_gt_maps(model, pose, kps, intrinsics, SchemeKind.RADIAL)
        vector = generate_gt_maps(model, pose, kps, intrinsics, SchemeKind.VECTOR)
        offset = generate_gt_maps(model, pose, kps, intrinsics, SchemeKind.OFFSET)
        for r, v, o in zip(radial, vector, offset):
            assert_allclose(r.masked_values * v.masked_values, o.masked_values, atol=1e-9)
            assert_allclose(np.linalg.norm(o.masked_values, axis=1), r.masked_values[:, 0], atol=1e-9)

    def test_z_buffer_keeps_nearest_point(self):
        model = PointCloud([[0.0, 0.0, 1000.0], [0.0, 0.0, 900.0], [0.0, 0.0, 950.0]])
        depth = render_depth(model, RigidTransform.identity(), SMALL_CAMERA)
        self.assertEqual(depth[24, 32], 900.0)
        self.assertEqual(int((depth > 0).sum()), 1)

    def test_background_plane_outside_mask(self):
        model = PointCloud([[0.0, 0.0, 1000.0]])
        maps = generate_gt_maps(
            model, RigidTransform.identity(), keypoints([0.0, 0.0, 0.0]), SMALL_CAMERA, "radial", background_depth=1500.0
        )
        self.assertEqual(maps[0].depth[0, 0], 1500.0)
        self.assertEqual(maps[0].depth[24, 32], 1000.0)

    def test_nothing_in_view(self):
        model = PointCloud([[0.0, 0.0, -1000.0]])
        with self.assertRaises(EmptyRenderError):
            generate_gt_maps(model, RigidTransform.identity(), keypoints([0.0, 0.0, 0.0]), SMALL_CAMERA, "radial")


class NoiseTests(SimpleTestCase):
    def constant_map(self, scheme, value, shape=(1000, 100)):
        values = np.broadcast_to(np.asarray(value, dtype=np.float64), shape + (scheme.channel_depth,)).copy()
        return VoteMap(scheme, values, np.ones(shape, dtype=bool))

    def test_zero_spec_is_identity(self):
        vote_map = self.constant_map(SchemeKind.RADIAL, 50.0, (8, 8))
        self.assertIs(apply_noise(vote_map, NoiseSpec()), vote_map)

    def test_radial_gaussian_spread(self):
        vote_map = self.constant_map(SchemeKind.RADIAL, 100.0)
        noisy = apply_noise(vote_map, NoiseSpec(NoiseKind.GAUSSIAN, (1.0,), 0.0, 3))
        error = noisy.masked_values[:, 0] - 100.0
        self.assertLess(abs(error.std() - 1.0), 0.05)
        self.assertLess(abs(error.mean()), 0.05)

    def test_uniform_half_width(self):
        vote_map = self.constant_map(SchemeKind.OFFSET, [10.0, 0.0, -10.0], (100, 100))
        noisy = apply_noise(vote_map, NoiseSpec(NoiseKind.UNIFORM, (2.0, 0.5, 0.0), 0.0, 4))
        error = noisy.masked_values - [10.0, 0.0, -10.0]
        self.assertLessEqual(np.abs(error[:, 0]).max(), 2.0)
        self.assertLessEqual(np.abs(error[:, 1]).max(), 0.5)
        assert_array_equal(error[:, 2], 0.0)

    def test_vector_stays_unit(self):
        vote_map = self.constant_map(SchemeKind.VECTOR, [0.0, 0.6, 0.8], (50, 50))
        noisy = apply_noise(vote_map, NoiseSpec(NoiseKind.GAUSSIAN, (0.3,), 0.0, 5))
        assert_allclose(np.linalg.norm(noisy.masked_values, axis=1), 1.0, atol=1e-6)

    def test_polar_stays_in_range(self):
        vote_map = self.constant_map(SchemeKind.POLAR, [0.05, 3.1], (50, 50))
        apply_noise(vote_map, NoiseSpec(NoiseKind.GAUSSIAN, (0.5, 0.5), 0.0, 6)).check()

    def test_radial_stays_non_negative(self):
        vote_map = self.constant_map(SchemeKind.RADIAL, 0.5, (50, 50))
        noisy = apply_noise(vote_map, NoiseSpec(NoiseKind.GAUSSIAN, (5.0,), 0.0, 7))
        self.assertTrue(np.all(noisy.masked_values > 0.0))

    def test_fixed_seed_is_bit_identical(self):
        vote_map = self.constant_map(SchemeKind.OFFSET, [1.0, 2.0, 3.0], (40, 40))
        spec = NoiseSpec(NoiseKind.GAUSSIAN, (1.0, 2.0, 3.0), 0.05, 11)
        first, second = apply_noise(vote_map, spec), apply_noise(vote_map, spec)
        assert_array_equal(first.values, second.values)
        assert_array_equal(first.mask, second.mask)
        third = apply_noise(vote_map, spec.reseeded(12))
        self.assertFalse(np.array_equal(first.values, third.values))

    def test_mask_flips(self):
        mask = np.zeros((100, 100), dtype=bool)
        mask[20:80, 20:80] = True
        values = np.where(mask[:, :, None], 42.0, 0.0)
        vote_map = VoteMap(SchemeKind.RADIAL, values, mask)
        noisy = apply_noise(vote_map, NoiseSpec(NoiseKind.GAUSSIAN, (0.0,), 0.1, 2))
        gained = noisy.mask & ~mask
        lost = mask & ~noisy.mask
        self.assertTrue(gained.any() and lost.any())
        assert_array_equal(noisy.values[gained], 42.0)
        assert_array_equal(noisy.values[~noisy.mask], 0.0)

    def test_channel_count_mismatch(self):
        vote_map = self.constant_map(SchemeKind.OFFSET, [1.0, 2.0, 3.0], (4, 4))
        with self.assertRaises(ParameterError):
            apply_noise(vote_map, NoiseSpec(NoiseKind.GAUSSIAN, (1.0, 2.0), 0.0, 0))

    def test_invalid_spec(self):
        with self.assertRaises(ParameterError):
            NoiseSpec(NoiseKind.GAUSSIAN, (-1.0,))
        with self.assertRaises(ParameterError):
            NoiseSpec(NoiseKind.GAUSSIAN, (1.0,), 1.0)

    def test_relative_noise_scales_with_distance(self):
        near = self.constant_map(SchemeKind.OFFSET, [3.0, 4.0, 0.0])
        far = self.constant_map(SchemeKind.OFFSET, [30.0, 40.0, 0.0])
        spec = NoiseSpec(NoiseKind.GAUSSIAN, (0.1,), 0.0, 8, relative=True)
        near_error = apply_noise(near, spec).masked_values - [3.0, 4.0, 0.0]
        far_error = apply_noise(far, spec).masked_values - [30.0, 40.0, 0.0]
        assert_allclose(near_error.std(axis=0), 0.5, rtol=0.05)
        assert_allclose(far_error, 10.0 * near_error, rtol=1e-9, atol=1e-9)
        radial_spec = NoiseSpec(NoiseKind.GAUSSIAN, (0.01,), 0.0, 3, relative=True)
        radial = apply_noise(self.constant_map(SchemeKind.RADIAL, 200.0), radial_spec)
        self.assertLess(abs((radial.masked_values[:, 0] - 200.0).std() - 2.0), 0.1)
        self.assertTrue(spec.reseeded(9).relative)

    def test_relative_noise_needs_a_distance(self):
        vote_map = self.constant_map(SchemeKind.VECTOR, [0.0, 0.6, 0.8], (4, 4))
        with self.assertRaises(ParameterError):
            apply_noise(vote_map, NoiseSpec(NoiseKind.GAUSSIAN, (0.1,), 0.0, 0, relative=True))


class LossTests(SimpleTestCase):
    def test_loss_s_identity_and_extremes(self):
        gt = np.random.default_rng(0).random((6, 9)) > 0.5
        self.assertEqual(loss_s(gt.astype(float), gt), 0.0)
        self.assertEqual(loss_s(np.zeros((3, 7)), np.ones((3, 7), dtype=bool)), 1.0)

    def test_loss_s_matches_double_loop(self):
        rng = np.random.default_rng(1)
        pred = rng.random((13, 17))
        gt = rng.random((13, 17)) > 0.4
        total = 0.0
        for i in range(13):
            for j in range(17):
                total += abs(pred[i, j] - float(gt[i, j]))
        self.assertAlmostEqual(loss_s(pred, gt), total / (13 * 17), delta=1e-12)

    def test_loss_s_shape_mismatch(self):
        with self.assertRaises(SizeError):
            loss_s(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_loss_m1_single_pixel(self):
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        gt = VoteMap(SchemeKind.RADIAL, np.where(mask, 10.0, 0.0), mask)
        pred = VoteMap(SchemeKind.RADIAL, np.where(mask, 12.5, 0.0), mask)
        self.assertEqual(loss_m1(pred, gt), 2.5)
        self.assertEqual(loss_m1(gt, gt), 0.0)

    def test_loss_m1_matches_naive_oracle(self):
        rng = np.random.default_rng(2)
        mask = rng.random((10, 12)) > 0.3
        gt = VoteMap(SchemeKind.OFFSET, rng.normal(size=(10, 12, 3)), mask)
        pred = VoteMap(SchemeKind.OFFSET, rng.normal(size=(10, 12, 3)), rng.random((10, 12)) > 0.5)
        total, count = 0.0, 0
        for i in range(10):
            for j in range(12):
                if mask[i, j]:
                    total += sum(abs(pred.values[i, j, c] - gt.values[i, j, c]) for c in range(3))
                    count += 1
        result = loss_m1(pred, gt)
        self.assertAlmostEqual(result, total / count, delta=1e-12)
        self.assertGreaterEqual(result, 0.0)

    def test_loss_m1_empty_mask(self):
        empty = VoteMap(SchemeKind.RADIAL, np.zeros((2, 2)), np.zeros((2, 2), dtype=bool))
        with self.assertRaises(EmptyMaskError) as ctx:
            loss_m1(empty, empty)
        self.assertIsInstance(ctx.exception, RadvoteError)
        self.assertIsInstance(ctx.exception, ZeroDivisionError)

    def test_loss_m1_scheme_mismatch(self):
        radial = VoteMap(SchemeKind.RADIAL, np.zeros((2, 2)), np.ones((2, 2), dtype=bool))
        offset = VoteMap(SchemeKind.OFFSET, np.zeros((2, 2, 3)), np.ones((2, 2), dtype=bool))
        with self.assertRaises(ParameterError):
            loss_m1(radial, offset)
