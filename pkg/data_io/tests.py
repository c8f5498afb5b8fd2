import os
import shutil
import tempfile

import cv2
import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from scipy.spatial.transform import Rotation

from accumulator.dump import MAGIC, load_grid, save_grid
from accumulator.grid import AccumulatorGrid
from core.errors import (
    ConfigError,
    DataIOError,
    DepthFormatError,
    ParameterError,
    PlyHeaderError,
    PlyLayoutError,
    PlyTruncatedError,
    PoseFileError,
)
from data_io.config import load_config, parse_config
from data_io.depth import load_depth_png16, save_depth_png16
from data_io.manifest import load_manifest, write_manifest
from data_io.ply import load_ply, save_ply
from data_io.poses import load_poses, parse_pose_line, save_poses
from geometry.types import PointCloud, RigidTransform
from pose_pipeline.specs import ExperimentKind, ExperimentSpec, NoiseConfig, ObjectSpec
from vote_maps.noise import NoiseKind
from vote_maps.schemes import SchemeKind

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


class TempDirMixin:
    def setUp(self):
        super().setUp()
        self.tmp = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)

    def path(self, name):
        return os.path.join(self.tmp, name)

    def write_bytes(self, name, data):
        with open(self.path(name), "wb") as f:
            f.write(data)
        return self.path(name)


class PlyTests(TempDirMixin, SimpleTestCase):
    def test_ascii_fixture(self):
        cloud = load_ply(os.path.join(FIXTURES, "triangle_ascii.ply"), 1.0)
        assert_array_equal(cloud.points, [[0.5, -1.25, 10.0], [2.0, 0.0, -3.75], [-4.5, 8.0, 0.125]])
        self.assertIsNone(cloud.normals)

    def test_unit_scale(self):
        cloud = load_ply(os.path.join(FIXTURES, "triangle_ascii.ply"), 1000.0)
        assert_array_equal(cloud.points[0], [500.0, -1250.0, 10000.0])
        with self.assertRaises(ParameterError):
            load_ply(os.path.join(FIXTURES, "triangle_ascii.ply"), 0.0)

    def test_binary_round_trip(self):
        rng = np.random.default_rng(0)
        cloud = PointCloud(rng.normal(scale=50.0, size=(257, 3)), rng.normal(size=(257, 3)))
        save_ply(self.path("model.ply"), cloud)
        loaded = load_ply(self.path("model.ply"), 1.0)
        assert_array_equal(loaded.points, cloud.points)
        assert_array_equal(loaded.normals, cloud.normals)

    def test_ascii_round_trip(self):
        cloud = PointCloud(np.random.default_rng(1).uniform(-1.0, 1.0, size=(20, 3)) / 3.0)
        save_ply(self.path("model.ply"), cloud, binary=False)
        assert_array_equal(load_ply(self.path("model.ply"), 1.0).points, cloud.points)

    def test_binary_float_with_extra_properties(self):
        header = (
            b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
            b"property float x\nproperty uchar red\nproperty float y\nproperty float z\nend_header\n"
        )
        dtype = np.dtype([("x", "<f4"), ("red", "u1"), ("y", "<f4"), ("z", "<f4")])
        body = np.array([(1.5, 200, -2.0, 0.25), (3.0, 10, 4.0, -8.0)], dtype=dtype).tobytes()
        cloud = load_ply(self.write_bytes("colored.ply", header + body), 10.0)
        assert_array_equal(cloud.points, [[15.0, -20.0, 2.5], [30.0, 40.0, -80.0]])

    def test_garbage_header(self):
        with self.assertRaises(PlyHeaderError):
            load_ply(self.write_bytes("junk.ply", b"\x00\x01 not a ply file at all"), 1.0)
        with self.assertRaises(PlyHeaderError):
            load_ply(self.write_bytes("bad.ply", b"ply\nformat ascii 1.0\nwhatever 3\nend_header\n"), 1.0)

    def test_truncated_binary(self):
        save_ply(self.path("model.ply"), PointCloud(np.ones((10, 3)) * np.arange(10)[:, None]))
        with open(self.path("model.ply"), "rb") as f:
            data = f.read()
        with self.assertRaises(PlyTruncatedError):
            load_ply(self.write_bytes("short.ply", data[:-9]), 1.0)

    def test_truncated_ascii(self):
        data = b"ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n"
        with self.assertRaises(PlyTruncatedError):
            load_ply(self.write_bytes("short.ply", data), 1.0)

    def test_unsupported_layouts(self):
        integer_coords = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty int y\nproperty int z\nend_header\n1 2 3\n"
        with self.assertRaises(PlyLayoutError):
            load_ply(self.write_bytes("int.ply", integer_coords), 1.0)
        face_first = (
            b"ply\nformat ascii 1.0\nelement face 0\nproperty list uchar int vertex_indices\n"
            b"element vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n"
        )
        with self.assertRaises(PlyLayoutError):
            load_ply(self.write_bytes("face.ply", face_first), 1.0)
        big_endian = b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n"
        with self.assertRaises(PlyLayoutError):
            load_ply(self.write_bytes("be.ply", big_endian), 1.0)

    def test_non_finite_vertices(self):
        data = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\nnan 0 0\n"
        with self.assertRaises(PlyLayoutError):
            load_ply(self.write_bytes("nan.ply", data), 1.0)


class DepthTests(TempDirMixin, SimpleTestCase):
    def test_all_zero_image_is_invalid(self):
        save_depth_png16(self.path("zero.png"), np.zeros((4, 6)))
        depth = load_depth_png16(self.path("zero.png"))
        self.assertEqual(depth.shape, (4, 6))
        self.assertFalse(np.any(depth > 0))

    def test_gradient_times_scale(self):
        units = np.arange(12, dtype=np.uint16).reshape(3, 4) * 100
        ok, encoded = cv2.imencode(".png", units)
        self.assertTrue(ok)
        encoded.tofile(self.path("gradient.png"))
        assert_allclose(load_depth_png16(self.path("gradient.png"), 0.1), units * 0.1)

    def test_round_trip(self):
        depth = np.random.default_rng(2).integers(0, 3000, size=(48, 64)).astype(np.float64)
        depth[0, 0] = np.nan
        save_depth_png16(self.path("depth.png"), depth)
        loaded = load_depth_png16(self.path("depth.png"))
        expected = np.where(np.isnan(depth), 0.0, depth)
        assert_array_equal(loaded, expected)

    def test_wrong_formats(self):
        ok, encoded = cv2.imencode(".png", np.zeros((3, 3), dtype=np.uint8))
        encoded.tofile(self.path("eight_bit.png"))
        with self.assertRaises(DepthFormatError):
            load_depth_png16(self.path("eight_bit.png"))
        with self.assertRaises(DepthFormatError):
            load_depth_png16(self.write_bytes("junk.png", b"not an image"))
        with self.assertRaises(DepthFormatError):
            save_depth_png16(self.path("deep.png"), np.full((2, 2), 70000.0))
        with self.assertRaises(FileNotFoundError):
            load_depth_png16(self.path("missing.png"))


class PoseFileTests(TempDirMixin, SimpleTestCase):
    def test_round_trip_is_exact(self):
        rng = np.random.default_rng(3)
        poses = [
            (f"obj_{i}", RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.uniform(-900, 900, 3)))
            for i in range(5)
        ]
        save_poses(self.path("poses.txt"), poses)
        loaded = load_poses(self.path("poses.txt"))
        self.assertEqual([name for name, _ in loaded], [name for name, _ in poses])
        for (_, pose), (_, back) in zip(poses, loaded):
            assert_array_equal(back.rotation, pose.rotation)
            assert_array_equal(back.translation, pose.translation)

    def test_comments_and_rounded_rotations(self):
        text = (
            "# object R00 R01 R02 t0 ...\n"
            "\n"
            "ape 0.866025 -0.5 0 10 0.5 0.866025 0 20 0 0 1 800\n"
        )
        with open(self.path("poses.txt"), "w") as f:
            f.write(text)
        [(name, pose)] = load_poses(self.path("poses.txt"))
        self.assertEqual(name, "ape")
        assert_allclose(pose.rotation[0, :2], [np.cos(np.pi / 6), -0.5], atol=1e-6)
        assert_array_equal(pose.translation, [10.0, 20.0, 800.0])

    def test_malformed_lines(self):
        with self.assertRaises(PoseFileError):
            parse_pose_line("ape 1 0 0 0", 3)
        with self.assertRaises(PoseFileError):
            parse_pose_line("ape 1 0 0 0 0 1 0 0 0 0 one 0", 3)
        with self.assertRaises(PoseFileError):
            parse_pose_line("ape 2 0 0 0 0 1 0 0 0 0 1 0", 3)
        with self.assertRaises(PoseFileError):
            save_poses(self.path("bad.txt"), [("two words", RigidTransform.identity())])


class ManifestTests(TempDirMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        os.makedirs(self.path("models"))
        save_ply(self.path("models/ape.ply"), PointCloud(np.random.default_rng(4).normal(scale=0.03, size=(50, 3))))
        save_depth_png16(self.path("depth_0.png"), np.full((480, 640), 812.0))
        self.record = {
            "object_id": "ape",
            "model_path": "models/ape.ply",
            "model_scale": 1000.0,
            "gt_pose": [1, 0, 0, 5, 0, 1, 0, -3, 0, 0, 1, 800],
            "depth_path": "depth_0.png",
        }

    def test_entries_resolve_relative_paths(self):
        write_manifest(self.path("manifest.json"), {"entries": [self.record]})
        [entry] = load_manifest(self.path("manifest.json"))
        self.assertEqual(entry.model_path, self.path("models/ape.ply"))
        assert_array_equal(entry.gt_pose.translation, [5.0, -3.0, 800.0])
        self.assertEqual(entry.intrinsics.width, 640)
        self.assertEqual(len(entry.load_model()), 50)
        self.assertTrue(np.all(entry.load_frame().valid))

    def test_bad_entries(self):
        write_manifest(self.path("missing.json"), [dict(self.record, model_path="models/none.ply")])
        with self.assertRaises(DataIOError):
            load_manifest(self.path("missing.json"))
        incomplete = {k: v for k, v in self.record.items() if k != "model_scale"}
        write_manifest(self.path("incomplete.json"), [incomplete])
        with self.assertRaises(DataIOError):
            load_manifest(self.path("incomplete.json"))
        write_manifest(self.path("pose.json"), [dict(self.record, gt_pose=[1, 2, 3])])
        with self.assertRaises(PoseFileError):
            load_manifest(self.path("pose.json"))
        with open(self.path("broken.json"), "w") as f:
            f.write("{")
        with self.assertRaises(DataIOError):
            load_manifest(self.path("broken.json"))

    def test_config_objects_from_manifest(self):
        write_manifest(self.path("manifest.json"), [self.record, dict(self.record, depth_path=None)])
        spec = parse_config({"paths": {"dataset_manifest": self.path("manifest.json")}})
        self.assertEqual(len(spec.object_specs), 1)
        ape = spec.object_specs[0]
        self.assertEqual((ape.name, ape.scale), ("ape", 1000.0))
        self.assertAlmostEqual(ape.build(100).radius, load_ply(self.path("models/ape.ply"), 1000.0).radius)


class ConfigTests(TempDirMixin, SimpleTestCase):
    def test_empty_file_gives_defaults(self):
        spec = load_config(os.path.join(FIXTURES, "empty_config.json"))
        self.assertEqual(spec, ExperimentSpec())
        self.assertEqual(spec.resolutions, (5.0,))

    def test_full_fixture(self):
        expected = ExperimentSpec(
            experiment=ExperimentKind.SCHEME_COMPARISON,
            schemes=(SchemeKind.RADIAL, SchemeKind.OFFSET),
            resolutions_mm=(2.0, 4.0),
            keypoint_counts=(3, 4),
            keypoint_sets=("surface",),
            objects=(ObjectSpec("ring", shape="sphere_shell", radius_mm=40.0, symmetric=True),),
            noise=NoiseConfig(
                NoiseKind.UNIFORM, {SchemeKind.RADIAL: (1.5,), SchemeKind.OFFSET: (2.0, 2.0, 3.0)}, 0.01
            ),
            trials=4,
            seed=7,
            vote_sample=150,
            perturbation_mm=1.5,
            occlusion=0.2,
            icp=True,
            timing_repeats=5,
            auc_max_mm=100.0,
            accuracy_fraction=0.1,
            record_timing=False,
            max_grid_mb=256.0,
            model_points=800,
            paths={"output_dir": "results"},
        )
        self.assertEqual(load_config(os.path.join(FIXTURES, "full_config.json")), expected)

    def assertFieldError(self, data, field):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(data)
        self.assertEqual(ctx.exception.field, field)

    def test_errors_name_the_field(self):
        self.assertFieldError({"resolutions_mm": [-1]}, "resolutions_mm[0]")
        self.assertFieldError({"resolutions_mm": [2.0, "fine"]}, "resolutions_mm[1]")
        self.assertFieldError({"trials": "4"}, "trials")
        self.assertFieldError({"trials": True}, "trials")
        self.assertFieldError({"resolution": 5}, "resolution")
        self.assertFieldError({"schemes": ["radial", "spherical"]}, "schemes[1]")
        self.assertFieldError({"keypoint_counts": [2]}, "keypoint_counts[0]")
        self.assertFieldError({"occlusion": 1.0}, "occlusion")
        self.assertFieldError({"noise": "loud"}, "noise")
        self.assertFieldError({"noise": {"sigma": {"offset": [1.0, 2.0]}}}, "noise.sigma.offset")
        self.assertFieldError({"objects": [{"name": "x", "path": "m.ply"}]}, "objects[0].scale")
        self.assertFieldError({"objects": [{"name": "x", "shape": "cone", "radius_mm": 3}]}, "objects[0].shape")
        self.assertFieldError({"paths": {"out": "x"}}, "paths.out")
        self.assertFieldError([1, 2], "<root>")

    def test_noise_profile_by_name(self):
        spec = parse_config({"noise": "none", "experiment": "Ensemble"})
        self.assertEqual(spec.experiment, ExperimentKind.ENSEMBLE)
        self.assertEqual(spec.noise.profile, "none")

    def test_relative_noise(self):
        spec = parse_config({"noise": {"sigma": {"offset": [0.2], "radial": 1.0}, "relative": ["Offset"]}})
        self.assertEqual(spec.noise.relative, frozenset({SchemeKind.OFFSET}))
        self.assertTrue(spec.noise.spec_for(SchemeKind.OFFSET, 0).relative)
        self.assertFieldError({"noise": {"relative": ["polar"]}}, "noise.relative[0]")
        self.assertFieldError({"noise": {"relative": []}}, "noise.relative")
        self.assertFieldError({"noise": {"relative": ["depth"]}}, "noise.relative[0]")

    def test_invalid_json_and_missing_file(self):
        with open(self.path("bad.json"), "w") as f:
            f.write('{"trials": 3,,}')
        with self.assertRaises(ConfigError) as ctx:
            load_config(self.path("bad.json"))
        self.assertEqual(ctx.exception.field, "<root>")
        with self.assertRaises(DataIOError):
            load_config(self.path("absent.json"))


def mutated(rng, data: bytes) -> bytes:
    """One random corruption of ``data``: flipped bytes, a cut, an insertion or a splice."""
    blob = bytearray(data)
    action = int(rng.integers(4))
    if action == 0 and blob:
        for position in rng.integers(0, len(blob), size=int(rng.integers(1, 6))):
            blob[position] = int(rng.integers(256))
    elif action == 1 and blob:
        del blob[int(rng.integers(len(blob))):]
    elif action == 2:
        position = int(rng.integers(len(blob) + 1))
        blob[position:position] = rng.integers(0, 256, size=int(rng.integers(1, 16)), dtype=np.uint8).tobytes()
    else:
        start = int(rng.integers(len(blob) + 1))
        blob[start:start + 8] = b"\n-1 nan\x00"
    return bytes(blob)


class LoaderFuzzTests(TempDirMixin, SimpleTestCase):
    """Random and corrupted inputs either load or fail with a DataIOError."""

    CASES = 120

    def seed_files(self):
        rng = np.random.default_rng(0)
        cloud = PointCloud(rng.normal(size=(6, 3)), rng.normal(size=(6, 3)))
        save_ply(self.path("binary.ply"), cloud)
        save_ply(self.path("ascii.ply"), cloud, binary=False)
        save_depth_png16(self.path("depth.png"), rng.uniform(0.0, 900.0, size=(6, 5)))
        pose = RigidTransform(Rotation.random(random_state=1).as_matrix(), [1.0, 2.0, 3.0])
        save_poses(self.path("poses.txt"), [("ape", pose), ("ape", pose.inverse())])
        grid = AccumulatorGrid(np.array([-4.0, 0.5, 2.0]), 2.0, (3, 2, 4))
        grid.counts[:] = rng.integers(0, 9, size=grid.counts.shape)
        save_grid(grid, self.path("grid.rvag"))
        corpus = {}
        for loader, names in (
            (lambda p: load_ply(p, 1.0), ("binary.ply", "ascii.ply")),
            (load_depth_png16, ("depth.png",)),
            (load_poses, ("poses.txt",)),
            (load_grid, ("grid.rvag",)),
        ):
            seeds = []
            for name in names:
                with open(self.path(name), "rb") as f:
                    seeds.append(f.read())
            corpus[loader] = seeds
        return corpus

    def assertLoadsOrRejects(self, loader, data, label):
        path = self.write_bytes("case.bin", data)
        with self.subTest(label):
            try:
                loader(path)
            except DataIOError:
                pass

    def test_seed_files_load(self):
        for loader, seeds in self.seed_files().items():
            for data in seeds:
                loader(self.write_bytes("case.bin", data))

    def test_random_bytes(self):
        rng = np.random.default_rng(41)
        prefixes = (b"", b"ply\n", b"ply\nformat ascii 1.0\nend_header\n", b"\x89PNG\r\n\x1a\n", MAGIC)
        for loader in self.seed_files():
            for case in range(self.CASES):
                prefix = prefixes[case % len(prefixes)]
                data = prefix + rng.integers(0, 256, size=int(rng.integers(0, 200)), dtype=np.uint8).tobytes()
                self.assertLoadsOrRejects(loader, data, f"random {case}")

    def test_corrupted_valid_files(self):
        rng = np.random.default_rng(42)
        for loader, seeds in self.seed_files().items():
            for case in range(self.CASES):
                data = seeds[case % len(seeds)]
                for _ in range(int(rng.integers(1, 4))):
                    data = mutated(rng, data)
                self.assertLoadsOrRejects(loader, data, f"mutated {case}")
