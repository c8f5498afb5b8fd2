import os
import tempfile

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from scipy.spatial.transform import Rotation

from accumulator.dump import MAGIC, load_grid, save_grid
from accumulator.grid import AccumulatorGrid, build_grid, memory_for_extent
from accumulator.peaks import find_peak, merge_grids
from accumulator.voting import VoteStats, cast_offset_vote, cast_ray_vote, cast_sphere_vote, cast_votes
from cli.selftest import brute_force_ray, brute_force_sphere
from core.errors import DegeneracyError, GridDumpError, IncompatibleGridError, NoPeakError, ParameterError, SizeError
from geometry.camera import backproject_depth
from geometry.types import CameraIntrinsics, KeypointSet, PointCloud, RigidTransform, SelectionMethod
from vote_maps.render import generate_gt_maps
from vote_maps.schemes import SchemeKind, VoteMap


def unit_grid(dims, resolution=1.0, origin=(0.0, 0.0, 0.0)):
    return AccumulatorGrid(np.array(origin, dtype=np.float64), resolution, dims)


class GridTests(SimpleTestCase):
    def test_single_point_grid(self):
        grid = build_grid(np.array([[3.0, 4.0, 5.0]]), 0.0, 1.0)
        self.assertEqual(grid.dims, (1, 1, 1))
        self.assertEqual(grid.total, 0)

    def test_unit_cube_at_half_mm(self):
        cube = np.array([[(i >> a) & 1 for a in range(3)] for i in range(8)], dtype=np.float64)
        grid = build_grid(PointCloud(cube), 0.0, 0.5)
        self.assertEqual(grid.dims, (2, 2, 2))

    def test_padding_extends_every_side(self):
        grid = build_grid(np.array([[0.0, 0.0, 0.0], [10.0, 10.0, 10.0]]), 5.0, 2.0)
        assert_allclose(grid.origin, [-5.0, -5.0, -5.0])
        self.assertEqual(grid.dims, (10, 10, 10))

    def test_memory_row(self):
        self.assertEqual(memory_for_extent(479.0, 1.0), 4 * 479**3)
        grid = build_grid(np.array([[0.0, 0.0, 0.0], [479.0, 479.0, 479.0]]), 0.0, 1.0)
        self.assertEqual(grid.dims, (479, 479, 479))
        self.assertEqual(grid.memory_bytes, 4 * 479**3)

    def test_invalid_arguments(self):
        with self.assertRaises(SizeError):
            build_grid(np.zeros((0, 3)), 1.0, 1.0)
        with self.assertRaises(ParameterError):
            build_grid(np.zeros((1, 3)), 1.0, 0.0)
        with self.assertRaises(ParameterError):
            build_grid(np.zeros((1, 3)), -1.0, 1.0)

    def test_voxel_index_and_center(self):
        grid = unit_grid((4, 3, 2), 2.0, (10.0, 0.0, 0.0))
        self.assertEqual(grid.voxel_index([13.0, 1.0, 3.9]), (1, 0, 1))
        self.assertEqual(grid.voxel_index([18.0, 6.0, 4.0]), (3, 2, 1))
        self.assertIsNone(grid.voxel_index([9.9, 0.0, 0.0]))
        assert_allclose(grid.voxel_center((1, 0, 1)), [13.0, 1.0, 3.0])
        self.assertEqual(grid.linear_index((1, 2, 1)), 1 + 4 * (2 + 3 * 1))


class OffsetVoteTests(SimpleTestCase):
    def test_vote_at_voxel_center(self):
        grid = unit_grid((5, 5, 5), 2.0)
        stats = VoteStats()
        self.assertEqual(cast_offset_vote(grid, [3.0, 5.0, 7.0], [0.0, 0.0, 0.0], stats), 1)
        self.assertEqual(grid.count_at((1, 2, 3)), 1)
        self.assertEqual(grid.total, 1)

    def test_vote_lands_on_keypoint(self):
        grid = unit_grid((10, 10, 10))
        point, keypoint = np.array([1.2, 8.7, 3.3]), np.array([6.5, 2.25, 9.9])
        cast_offset_vote(grid, point, point - keypoint)
        self.assertEqual(grid.count_at(grid.voxel_index(keypoint)), 1)

    def test_target_outside_grid_is_dropped(self):
        grid = unit_grid((3, 3, 3))
        stats = VoteStats()
        self.assertEqual(cast_offset_vote(grid, [1.0, 1.0, 1.0], [-5.0, 0.0, 0.0], stats), 0)
        self.assertEqual((stats.votes, stats.dropped, grid.total), (1, 1, 0))


class RayVoteTests(SimpleTestCase):
    def test_axis_aligned_ray(self):
        grid = unit_grid((6, 1, 1))
        self.assertEqual(cast_ray_vote(grid, [2.5, 0.5, 0.5], [1.0, 0.0, 0.0]), 4)
        assert_array_equal(grid.counts[0, 0], [0, 0, 1, 1, 1, 1])

    def test_ray_pointing_away(self):
        grid = unit_grid((6, 1, 1))
        stats = VoteStats()
        self.assertEqual(cast_ray_vote(grid, [-1.0, 0.5, 0.5], [-1.0, 0.0, 0.0], stats), 0)
        self.assertEqual(stats.dropped, 1)

    def test_ray_entering_from_outside(self):
        grid = unit_grid((4, 4, 1))
        self.assertEqual(cast_ray_vote(grid, [-3.0, 1.5, 0.5], [1.0, 0.0, 0.0]), 4)
        assert_array_equal(grid.counts[0, 1], [1, 1, 1, 1])

    def test_direction_must_be_unit(self):
        grid = unit_grid((3, 3, 3))
        with self.assertRaises(DegeneracyError):
            cast_ray_vote(grid, [1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
        with self.assertRaises(ParameterError):
            cast_ray_vote(grid, [1.0, 1.0, 1.0], [2.0, 0.0, 0.0])

    def test_random_rays_match_box_intersection(self):
        rng = np.random.default_rng(14)
        dims = (16, 12, 14)
        for _ in range(100):
            origin = rng.uniform(-4.0, 20.0, size=3)
            direction = rng.normal(size=3)
            if rng.random() < 0.2:
                direction[rng.integers(3)] = 0.0
            direction /= np.linalg.norm(direction)
            grid = unit_grid(dims)
            cast_ray_vote(grid, origin, direction)
            assert_array_equal(grid.counts, brute_force_ray(dims, origin, direction))


class SphereVoteTests(SimpleTestCase):
    def test_small_sphere_stays_in_its_voxel(self):
        grid = unit_grid((5, 5, 5), 2.0)
        self.assertEqual(cast_sphere_vote(grid, [5.0, 5.0, 5.0], 0.8), 1)
        self.assertEqual(grid.count_at((2, 2, 2)), 1)

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(15)
        dims = (20, 18, 16)
        for resolution in (1.0, 5.0):
            for _ in range(100):
                center = rng.uniform(-0.25, 1.25, size=3) * np.array(dims) * resolution
                radius = rng.uniform(0.3, 12.0) * resolution
                grid = unit_grid(dims, resolution)
                cast_sphere_vote(grid, center, radius)
                expected = brute_force_sphere(dims, center / resolution, radius / resolution)
                assert_array_equal(grid.counts, expected)

    def test_radius_five_voxels_at_voxel_center(self):
        center = np.array([7.5, 7.5, 7.5])
        for radius in (4.8, 5.0, 5.2):
            grid = unit_grid((15, 15, 15))
            self.assertEqual(cast_sphere_vote(grid, center, radius), 262)
            assert_array_equal(grid.counts, brute_force_sphere((15, 15, 15), center, 5.0))
            self.assertEqual(grid.counts.max(), 1)
        # the poles keep only their centre voxel
        self.assertEqual(grid.count_at((7, 7, 2)), 1)
        self.assertEqual(int(grid.counts[2].sum()), 1)

    def test_corrupted_half_width_differs(self):
        dims, center = (15, 15, 15), np.array([7.3, 7.6, 7.1])
        self.assertFalse(
            np.array_equal(brute_force_sphere(dims, center, 5.0, 0.4), brute_force_sphere(dims, center, 5.0))
        )

    def test_rows_cannot_cross_the_shell_unseen(self):
        grid = unit_grid((30, 30, 30))
        center, radius = np.array([15.2, 14.7, 15.4]), 9.5
        cast_sphere_vote(grid, center, radius)
        for k in range(30):
            dz = k + 0.5 - center[2]
            if radius**2 - dz**2 < 1.0:
                continue
            slice_radius = np.sqrt(radius**2 - dz**2)
            for j in range(30):
                dy = j + 0.5 - center[1]
                start = int(np.floor(center[0]))
                if np.hypot(start + 0.5 - center[0], dy) >= slice_radius - 0.5:
                    continue
                for step in (1, -1):
                    i, seen = start, False
                    while np.hypot(i + 0.5 - center[0], dy) < slice_radius + 0.5:
                        seen = seen or grid.counts[k, j, i] > 0
                        i += step
                    self.assertTrue(seen, (k, j, step))

    def test_three_spheres_meet_in_one_voxel(self):
        grid = unit_grid((12, 12, 12))
        meet = np.array([1.5, 1.5, 1.5])
        centers = [meet + [-8.0, 0.0, 0.0], meet + [0.0, 8.0, 0.0], meet + [0.0, 0.0, 8.0]]
        for center in centers:
            cast_sphere_vote(grid, center, 8.0)
        peak = find_peak(grid)
        self.assertEqual(peak.index, (1, 1, 1))
        self.assertEqual(peak.count, 3)
        self.assertEqual(int((grid.counts == 3).sum()), 1)

    def test_non_positive_radius(self):
        with self.assertRaises(ParameterError):
            cast_sphere_vote(unit_grid((3, 3, 3)), [1.0, 1.0, 1.0], 0.0)


class CastVotesTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(30)
        self.intrinsics = CameraIntrinsics.linemod()
        self.model = PointCloud(rng.normal(size=(2500, 3)) * [30.0, 22.0, 15.0])
        self.pose = RigidTransform(Rotation.random(random_state=rng).as_matrix(), [12.0, -8.0, 760.0])
        self.keypoints = KeypointSet(rng.normal(scale=45.0, size=(2, 3)), SelectionMethod.FPS)

    def grid_for(self, vote_map, resolution):
        points, _ = backproject_depth(vote_map.depth, self.intrinsics, vote_map.mask)
        pad = float(np.max(np.linalg.norm(points - vote_map.keypoint, axis=1))) + 2.0 * resolution
        return build_grid(points, pad, resolution)

    def test_empty_mask(self):
        vote_map = VoteMap(SchemeKind.RADIAL, np.zeros((4, 4)), np.zeros((4, 4), dtype=bool), np.ones((4, 4)))
        stats = cast_votes(unit_grid((3, 3, 3)), vote_map, intrinsics=CameraIntrinsics(10.0, 10.0, 2.0, 2.0, 4, 4))
        self.assertEqual(stats.votes, 0)

    def test_single_pixel_matches_single_sphere(self):
        intrinsics = CameraIntrinsics(100.0, 100.0, 2.0, 2.0, 4, 4)
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 3] = True
        depth = np.full((4, 4), 50.0)
        vote_map = VoteMap(SchemeKind.RADIAL, np.where(mask, 7.5, 0.0), mask, depth, intrinsics)
        by_map = unit_grid((10, 10, 10), 2.0, (-10.0, -10.0, 40.0))
        stats = cast_votes(by_map, vote_map)
        by_hand = by_map.empty_like()
        hits = cast_sphere_vote(by_hand, [0.5, -0.5, 50.0], 7.5)
        assert_array_equal(by_map.counts, by_hand.counts)
        self.assertEqual((stats.votes, stats.increments), (1, hits))

    def test_noiseless_peaks_within_resolution(self):
        resolution = 2.0
        truth = self.pose.apply(self.keypoints.keypoints)
        for scheme in SchemeKind:
            maps = generate_gt_maps(self.model, self.pose, self.keypoints, self.intrinsics, scheme)
            for vote_map, keypoint in zip(maps, truth):
                grid = self.grid_for(vote_map, resolution)
                stats = cast_votes(grid, vote_map, sample=300, seed=1)
                peak = find_peak(grid)
                self.assertLessEqual(np.linalg.norm(peak.location - keypoint), resolution, scheme.value)
                self.assertLessEqual(peak.count, stats.votes)
                self.assertEqual(grid.total, stats.increments)

    def test_identical_grids_across_workers(self):
        for scheme in (SchemeKind.RADIAL, SchemeKind.VECTOR, SchemeKind.OFFSET):
            vote_map = generate_gt_maps(self.model, self.pose, self.keypoints, self.intrinsics, scheme)[0]
            grids = []
            for workers in (1, 3, 4):
                grid = self.grid_for(vote_map, 4.0)
                stats = cast_votes(grid, vote_map, workers=workers)
                grids.append((grid.counts, stats.votes, stats.increments))
            for counts, votes, increments in grids[1:]:
                assert_array_equal(counts, grids[0][0])
                self.assertEqual((votes, increments), grids[0][1:])

    def test_sampling_is_seeded(self):
        vote_map = generate_gt_maps(self.model, self.pose, self.keypoints, self.intrinsics, "offset")[0]
        first, second = self.grid_for(vote_map, 4.0), self.grid_for(vote_map, 4.0)
        self.assertEqual(cast_votes(first, vote_map, sample=50, seed=9).votes, 50)
        cast_votes(second, vote_map, sample=50, seed=9)
        assert_array_equal(first.counts, second.counts)

    def test_missing_depth(self):
        vote_map = VoteMap(SchemeKind.RADIAL, np.ones((2, 2)), np.ones((2, 2), dtype=bool))
        with self.assertRaises(ParameterError):
            cast_votes(unit_grid((2, 2, 2)), vote_map)


class PeakTests(SimpleTestCase):
    def test_single_nonzero_voxel(self):
        grid = unit_grid((4, 4, 4), 2.0, (1.0, 1.0, 1.0))
        grid.counts[3, 1, 2] = 7
        peak = find_peak(grid)
        self.assertEqual((peak.index, peak.count, peak.refined), ((2, 1, 3), 7, False))
        assert_allclose(peak.location, [6.0, 4.0, 8.0])

    def test_tie_goes_to_smaller_linear_index(self):
        grid = unit_grid((4, 4, 4))
        grid.counts[2, 0, 0] = 5
        grid.counts[0, 3, 1] = 5
        self.assertEqual(find_peak(grid).index, (1, 3, 0))

    def test_empty_grid(self):
        with self.assertRaises(NoPeakError):
            find_peak(unit_grid((2, 2, 2)))

    def test_refined_location_is_weighted_centroid(self):
        grid = unit_grid((5, 5, 5))
        grid.counts[2, 2, 2] = 3
        grid.counts[2, 2, 3] = 1
        peak = find_peak(grid, refine=True)
        self.assertTrue(peak.refined)
        assert_allclose(peak.location, [2.75, 2.5, 2.5])

    def test_refinement_clips_at_the_border(self):
        grid = unit_grid((3, 3, 3))
        grid.counts[0, 0, 0] = 2
        grid.counts[1, 0, 0] = 2
        grid.counts[0, 0, 1] = 1
        peak = find_peak(grid, refine=True)
        self.assertEqual(peak.index, (0, 0, 0))
        assert_allclose(peak.location, [0.5 + 0.2, 0.5, 0.5 + 0.4])


class MergeTests(SimpleTestCase):
    def random_grid(self, rng):
        grid = unit_grid((5, 4, 3), 1.5, (1.0, 2.0, 3.0))
        grid.counts[:] = rng.integers(0, 100, size=grid.counts.shape)
        return grid

    def test_zero_grid_is_identity(self):
        grid = self.random_grid(np.random.default_rng(0))
        assert_array_equal(merge_grids([grid, grid.empty_like()]).counts, grid.counts)

    def test_commutative_and_associative(self):
        rng = np.random.default_rng(1)
        a, b, c = (self.random_grid(rng) for _ in range(3))
        assert_array_equal(merge_grids([a, b]).counts, merge_grids([b, a]).counts)
        assert_array_equal(merge_grids([merge_grids([a, b]), c]).counts, merge_grids([a, merge_grids([b, c])]).counts)
        assert_array_equal(merge_grids([a, b, c]).counts, a.counts + b.counts + c.counts)

    def test_geometry_mismatch(self):
        a = unit_grid((2, 2, 2))
        with self.assertRaises(IncompatibleGridError):
            merge_grids([a, unit_grid((2, 2, 3))])
        with self.assertRaises(IncompatibleGridError):
            merge_grids([a, unit_grid((2, 2, 2), 2.0)])
        with self.assertRaises(SizeError):
            merge_grids([])

    def test_ensemble_of_schemes_has_a_peak(self):
        rng = np.random.default_rng(2)
        intrinsics = CameraIntrinsics.linemod()
        model = PointCloud(rng.normal(scale=25.0, size=(1500, 3)))
        pose = RigidTransform(np.eye(3), [0.0, 0.0, 700.0])
        keypoints = KeypointSet([[40.0, 10.0, -20.0]], SelectionMethod.FPS)
        maps = [generate_gt_maps(model, pose, keypoints, intrinsics, s)[0] for s in ("radial", "offset", "vector")]
        points, _ = backproject_depth(maps[0].depth, intrinsics, maps[0].mask)
        template = build_grid(points, 120.0, 4.0)
        grids = []
        for vote_map in maps:
            grid = template.empty_like()
            cast_votes(grid, vote_map, sample=200, seed=3)
            grids.append(grid)
        peak = find_peak(merge_grids(grids))
        self.assertLessEqual(np.linalg.norm(peak.location - pose.apply(keypoints.keypoints)[0]), 4.0)


class GridDumpTests(SimpleTestCase):
    def test_dump_restores_grid(self):
        grid = unit_grid((3, 4, 5), 2.5, (-1.0, 2.0, 700.0))
        grid.counts[:] = np.arange(60, dtype=np.uint32).reshape(5, 4, 3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "grid.rvag")
            save_grid(grid, path)
            with open(path, "rb") as f:
                self.assertEqual(f.read(4), MAGIC)
            loaded = load_grid(path)
        self.assertTrue(loaded.same_geometry(grid))
        assert_array_equal(loaded.counts, grid.counts)

    def test_corrupt_dumps(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "bad.rvag")
            with open(path, "wb") as f:
                f.write(b"XXXX" + bytes(60))
            with self.assertRaises(GridDumpError):
                load_grid(path)
            save_grid(unit_grid((2, 2, 2)), path)
            with open(path, "ab") as f:
                f.write(b"\x00")
            with self.assertRaises(GridDumpError):
                load_grid(path)
