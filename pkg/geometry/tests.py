import itertools

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from scipy.spatial.transform import Rotation

from core.errors import DegeneracyError, GeometryError, InvalidDepthError, ParameterError, RankError, SizeError
from geometry.camera import backproject, backproject_depth, project, project_points
from geometry.horn import horn_solve, residuals
from geometry.icp import icp_refine, mean_residual
from geometry.keypoints import bbox_corners, bbox_keypoints, disperse_keypoints, fps_keypoints, order_corners
from geometry.types import CameraIntrinsics, KeypointSet, Pixel, PointCloud, RigidTransform, SelectionMethod

UNIT_CUBE = np.array([[(i >> a) & 1 for a in range(3)] for i in range(8)], dtype=np.float64)


def greedy_fps(points, k, seed_index):
    chosen = [seed_index]
    while len(chosen) < k:
        best, best_dist = None, -1.0
        for i, p in enumerate(points):
            d = min(np.linalg.norm(p - points[c]) for c in chosen)
            if d > best_dist:
                best, best_dist = i, d
        chosen.append(best)
    return chosen


class CameraTests(SimpleTestCase):
    def setUp(self):
        self.intrinsics = CameraIntrinsics(500.0, 520.0, 320.0, 240.0, 640, 480)

    def test_principal_ray(self):
        point = backproject(Pixel(320, 240, 1000.0), self.intrinsics)
        assert_allclose(point, [0.0, 0.0, 1000.0])

    def test_forty_five_degree_ray(self):
        point = backproject(Pixel(820, 240, 500.0), self.intrinsics)
        assert_allclose(point, [500.0, 0.0, 500.0])

    def test_invalid_depth(self):
        for depth in (0.0, -3.0, float("nan"), float("inf")):
            with self.assertRaises(InvalidDepthError):
                backproject(Pixel(10, 10, depth), self.intrinsics)

    def test_round_trip_random_pixels(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            fx, fy = rng.uniform(200.0, 900.0, size=2)
            intrinsics = CameraIntrinsics(fx, fy, rng.uniform(1, 639), rng.uniform(1, 479), 640, 480)
            pixel = Pixel(int(rng.integers(640)), int(rng.integers(480)), float(rng.uniform(100.0, 3000.0)))
            point = backproject(pixel, intrinsics)
            # forward pinhole: u = fx x / z + cx
            self.assertAlmostEqual(fx * point[0] / point[2] + intrinsics.cx, pixel.u, delta=1e-9)
            u, v = project(point, intrinsics)
            self.assertAlmostEqual(u, pixel.u, delta=1e-9)
            self.assertAlmostEqual(v, pixel.v, delta=1e-9)

    def test_project_points_marks_points_behind_camera(self):
        uv = project_points([[0.0, 0.0, 100.0], [1.0, 1.0, -5.0]], self.intrinsics)
        assert_allclose(uv[0], [320.0, 240.0])
        self.assertTrue(np.all(np.isnan(uv[1])))

    def test_backproject_depth_skips_invalid_pixels(self):
        intrinsics = CameraIntrinsics(100.0, 100.0, 2.0, 1.5, 4, 3)
        depth = np.zeros((3, 4))
        depth[1, 2] = 800.0
        depth[2, 0] = np.nan
        depth[0, 3] = 400.0
        points, pixels = backproject_depth(depth, intrinsics)
        assert_array_equal(pixels, [[3, 0], [2, 1]])
        assert_allclose(points[1], backproject(Pixel(2, 1, 800.0), intrinsics))

    def test_intrinsics_invariants(self):
        with self.assertRaises(ParameterError):
            CameraIntrinsics(0.0, 500.0, 320.0, 240.0, 640, 480)
        with self.assertRaises(ParameterError):
            CameraIntrinsics(500.0, 500.0, 640.0, 240.0, 640, 480)

    def test_intrinsics_dict_round_trip(self):
        intrinsics = CameraIntrinsics.linemod()
        self.assertEqual(CameraIntrinsics.from_dict(intrinsics.to_dict()), intrinsics)


class RigidTransformTests(SimpleTestCase):
    def test_rejects_non_orthonormal_rotation(self):
        with self.assertRaises(GeometryError):
            RigidTransform(np.diag([1.0, 1.0, 1.01]), np.zeros(3))

    def test_rejects_reflection(self):
        with self.assertRaises(GeometryError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_inverse_and_compose(self):
        pose = RigidTransform(Rotation.from_euler("xyz", [10, -20, 30], degrees=True).as_matrix(), [1.0, 2.0, 3.0])
        both = pose.compose(pose.inverse())
        assert_allclose(both.rotation, np.eye(3), atol=1e-12)
        assert_allclose(both.translation, np.zeros(3), atol=1e-12)

    def test_apply_single_point_keeps_shape(self):
        pose = RigidTransform(np.eye(3), [1.0, 0.0, 0.0])
        self.assertEqual(pose.apply([0.0, 0.0, 0.0]).shape, (3,))

    def test_from_matrix(self):
        matrix = np.eye(4)
        matrix[:3, 3] = [4.0, 5.0, 6.0]
        assert_allclose(RigidTransform.from_matrix(matrix).matrix, matrix)
        with self.assertRaises(GeometryError):
            RigidTransform.from_matrix(np.eye(3))


class PointCloudTests(SimpleTestCase):
    def test_empty_cloud(self):
        with self.assertRaises(SizeError):
            PointCloud(np.zeros((0, 3)))

    def test_non_finite_cloud(self):
        with self.assertRaises(GeometryError):
            PointCloud([[0.0, 0.0, np.inf]])

    def test_radius_is_max_centroid_distance(self):
        cloud = PointCloud([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, -3.0, 0.0]])
        self.assertEqual(cloud.radius, 3.0)

    def test_points_are_read_only(self):
        cloud = PointCloud(UNIT_CUBE)
        with self.assertRaises(ValueError):
            cloud.points[0, 0] = 5.0


class KeypointSelectionTests(SimpleTestCase):
    def test_fps_two_points(self):
        cloud = PointCloud([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]])
        kps = fps_keypoints(cloud, 2, seed_index=0)
        assert_allclose(kps.keypoints, cloud.points)

    def test_fps_cube_picks_opposite_corner(self):
        kps = fps_keypoints(PointCloud(UNIT_CUBE), 2, seed_index=0)
        assert_allclose(kps.keypoints[1], [1.0, 1.0, 1.0])
        self.assertEqual(kps.selection_method, SelectionMethod.FPS)

    def test_fps_matches_greedy_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            points = rng.normal(scale=40.0, size=(200, 3))
            seed_index = int(rng.integers(200))
            kps = fps_keypoints(PointCloud(points), 4, seed_index=seed_index)
            self.assertEqual(kps.metadata["indices"], greedy_fps(points, 4, seed_index))

    def test_fps_default_seed_is_farthest_from_centroid(self):
        points = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [9.0, 9.0, 9.0]])
        kps = fps_keypoints(PointCloud(points), 1)
        self.assertEqual(kps.metadata["indices"], [3])

    def test_fps_too_many(self):
        with self.assertRaises(SizeError):
            fps_keypoints(PointCloud(UNIT_CUBE), 9)

    def test_bbox_unit_cube(self):
        kps = bbox_keypoints(PointCloud(UNIT_CUBE), 1.0)
        assert_allclose(kps.keypoints, UNIT_CUBE)

    def test_bbox_scaled_about_center(self):
        kps = bbox_keypoints(PointCloud(UNIT_CUBE), 2.0)
        assert_allclose(kps.keypoints, 2.0 * UNIT_CUBE - 0.5)
        self.assertEqual(kps.dispersion_scale, 2.0)

    def test_bbox_random_cloud_matches_extent_scan(self):
        rng = np.random.default_rng(5)
        points = rng.uniform(-30.0, 70.0, size=(300, 3))
        lo = [min(p[a] for p in points) for a in range(3)]
        hi = [max(p[a] for p in points) for a in range(3)]
        corners = bbox_corners(PointCloud(points), 2.0)
        for i, corner in enumerate(corners):
            for a in range(3):
                center, half = (lo[a] + hi[a]) / 2, (hi[a] - lo[a]) / 2
                expected = center + half * 2.0 if (i >> a) & 1 else center - half * 2.0
                self.assertAlmostEqual(corner[a], expected, places=9)

    def test_bbox_degenerate_cloud(self):
        flat = PointCloud([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [2.0, 0.0, 0.0]])
        with self.assertRaises(DegeneracyError):
            bbox_keypoints(flat, 2.0)

    def test_bbox_scale_below_one(self):
        with self.assertRaises(ParameterError):
            bbox_keypoints(PointCloud(UNIT_CUBE), 0.5)

    def test_ordered_triplet_maximises_smallest_side(self):
        order = order_corners(UNIT_CUBE, 3)
        assert_array_equal(order, [0, 3, 5])
        kps = bbox_keypoints(PointCloud(UNIT_CUBE), 1.0, count=3)
        sides = [np.linalg.norm(a - b) for a, b in itertools.combinations(kps.keypoints, 2)]
        assert_allclose(sides, [np.sqrt(2.0)] * 3)

    def test_ordered_extension_is_a_permutation(self):
        order = order_corners(UNIT_CUBE, 8)
        self.assertEqual(sorted(order.tolist()), list(range(8)))
        assert_array_equal(order[:3], [0, 3, 5])

    def test_bbox_count_range(self):
        with self.assertRaises(ParameterError):
            bbox_keypoints(PointCloud(UNIT_CUBE), 1.0, count=2)


class DispersionTests(SimpleTestCase):
    def test_identity_at_object_radius(self):
        kps = KeypointSet([[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0]], SelectionMethod.FPS)
        moved = disperse_keypoints(kps, [0.0, 0.0, 0.0], 1.0, 5.0)
        assert_allclose(moved.keypoints, kps.keypoints)

    def test_scale_three(self):
        kps = KeypointSet([[7.0, 0.0, 0.0]], SelectionMethod.FPS)
        moved = disperse_keypoints(kps, [0.0, 0.0, 0.0], 3.0, 7.0)
        assert_allclose(moved.keypoints, [[21.0, 0.0, 0.0]])
        self.assertEqual(moved.dispersion_scale, 3.0)

    def test_distances_and_angles_preserved(self):
        rng = np.random.default_rng(8)
        centroid = rng.normal(size=3)
        kps = KeypointSet(rng.normal(scale=20.0, size=(6, 3)), SelectionMethod.FPS)
        moved = disperse_keypoints(kps, centroid, 2.5, 40.0)
        before = kps.keypoints - centroid
        after = moved.keypoints - centroid
        assert_allclose(np.linalg.norm(after, axis=1), 100.0, atol=1e-9)
        unit_before = before / np.linalg.norm(before, axis=1)[:, None]
        unit_after = after / np.linalg.norm(after, axis=1)[:, None]
        assert_allclose(unit_after, unit_before, atol=1e-12)
        assert_allclose(unit_after @ unit_after.T, unit_before @ unit_before.T, atol=1e-12)

    def test_keypoint_on_centroid(self):
        kps = KeypointSet([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], SelectionMethod.FPS)
        with self.assertRaises(DegeneracyError):
            disperse_keypoints(kps, [0.0, 0.0, 0.0], 2.0, 1.0)

    def test_non_positive_scale(self):
        kps = KeypointSet([[1.0, 0.0, 0.0]], SelectionMethod.FPS)
        with self.assertRaises(ParameterError):
            disperse_keypoints(kps, [0.0, 0.0, 0.0], 0.0, 1.0)

    def test_mean_distance(self):
        kps = KeypointSet([[3.0, 0.0, 0.0], [0.0, 5.0, 0.0]], SelectionMethod.FPS)
        self.assertEqual(kps.mean_distance([0.0, 0.0, 0.0]), 4.0)

    def test_collinear_set_is_not_pose_ready(self):
        kps = KeypointSet([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]], SelectionMethod.FPS)
        with self.assertRaises(RankError):
            kps.require_pose_ready()
        with self.assertRaises(SizeError):
            kps.subset(2).require_pose_ready()


class HornTests(SimpleTestCase):
    def setUp(self):
        self.src = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 20.0, 0.0], [3.0, 4.0, 15.0]])

    def test_identity(self):
        pose = horn_solve(self.src, self.src)
        assert_allclose(pose.rotation, np.eye(3), atol=1e-12)
        assert_allclose(pose.translation, np.zeros(3), atol=1e-12)

    def test_constructed_transform(self):
        rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        truth = RigidTransform(rz, [1.0, 2.0, 3.0])
        pose = horn_solve(self.src, truth.apply(self.src))
        assert_allclose(pose.rotation, rz, atol=1e-9)
        assert_allclose(pose.translation, [1.0, 2.0, 3.0], atol=1e-9)

    def test_exact_on_random_transforms(self):
        rng = np.random.default_rng(21)
        for count in (3, 4, 8, 50):
            for _ in range(20):
                truth = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.uniform(-500, 500, size=3))
                src = rng.uniform(-100.0, 100.0, size=(count, 3))
                pose = horn_solve(src, truth.apply(src))
                self.assertLess(residuals(pose, src, truth.apply(src)).max(), 1e-9)
                self.assertAlmostEqual(np.linalg.det(pose.rotation), 1.0, delta=1e-9)

    def test_coplanar_points_are_enough(self):
        src = self.src[:3]
        truth = RigidTransform(Rotation.from_euler("z", 40, degrees=True).as_matrix(), [5.0, 0.0, 0.0])
        pose = horn_solve(src, truth.apply(src))
        assert_allclose(pose.rotation, truth.rotation, atol=1e-9)

    def test_collinear_source(self):
        src = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        with self.assertRaises(RankError):
            horn_solve(src, src)

    def test_size_mismatch(self):
        with self.assertRaises(SizeError):
            horn_solve(self.src, self.src[:3])


class IcpTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(2)
        self.model = PointCloud(rng.normal(size=(1000, 3)) * [40.0, 25.0, 15.0])
        self.truth = RigidTransform(
            Rotation.from_euler("xyz", [20, -35, 60], degrees=True).as_matrix(), [10.0, -20.0, 700.0]
        )
        self.scene = self.model.transformed(self.truth)

    def perturbed(self, rng, degrees, mm):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        step = RigidTransform(Rotation.from_rotvec(np.radians(degrees) * axis).as_matrix(), np.zeros(3))
        shift = rng.normal(size=3)
        shift *= mm / np.linalg.norm(shift)
        rotated = self.truth.compose(step)
        return RigidTransform(rotated.rotation, rotated.translation + shift)

    def test_exact_init_is_kept(self):
        pose = icp_refine(self.model, self.scene, self.truth)
        self.assertLess(pose.translation_error(self.truth), 1e-9)
        self.assertLess(pose.rotation_error_deg(self.truth), 1e-4)

    def test_converges_from_small_perturbation(self):
        init = self.perturbed(np.random.default_rng(4), 2.0, 2.0)
        pose = icp_refine(self.model, self.scene, init, max_iters=200, tol=1e-9)
        self.assertLess(pose.translation_error(self.truth), 0.1)
        self.assertLess(pose.rotation_error_deg(self.truth), 0.1)

    def test_never_ends_worse_than_init(self):
        rng = np.random.default_rng(6)
        gate = 10.0
        for _ in range(20):
            init = self.perturbed(rng, rng.uniform(0.0, 5.0), rng.uniform(0.0, 5.0))
            pose = icp_refine(self.model, self.scene, init, max_iters=10, max_correspondence_mm=gate)
            self.assertLessEqual(
                mean_residual(self.model, self.scene, pose, gate), mean_residual(self.model, self.scene, init, gate)
            )

    def test_residual_counts_only_gated_pairs(self):
        model = PointCloud(np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]]))
        scene = PointCloud(np.array([[0.0, 0.0, 1.0], [10.0, 0.0, 2.0], [50.0, 50.0, 50.0]]))
        pose = RigidTransform.identity()
        self.assertAlmostEqual(mean_residual(model, scene, pose, gate=5.0), 1.5)
        self.assertEqual(mean_residual(model, scene, pose, gate=0.5), float("inf"))
        shifted = RigidTransform(np.eye(3), [0.0, 0.0, 1.0])
        self.assertAlmostEqual(mean_residual(model, scene, shifted, gate=5.0), 0.5)
