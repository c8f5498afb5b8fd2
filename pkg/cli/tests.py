import csv
import json
import os
import shutil
import tempfile
from datetime import timedelta
from io import StringIO
from unittest import mock

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.db.utils import OperationalError
from django.test import SimpleTestCase, TestCase, override_settings
from django.utils import timezone

from cli import db_utils
from cli.db_utils import retry_on_db_lock
from cli.models import ExperimentRun
from cli.report import format_value, write_csv
from cli.selftest import run_selftest
from data_io.ply import save_ply
from data_io.poses import save_poses
from geometry.types import PointCloud, RigidTransform

TINY_CONFIG = {
    "objects": [{"name": "ring", "shape": "sphere_shell", "radius_mm": 40.0}],
    "schemes": ["radial"],
    "resolutions_mm": [8.0],
    "keypoint_counts": [3],
    "keypoint_sets": ["surface"],
    "noise": "none",
    "trials": 2,
    "seed": 3,
    "vote_sample": 60,
    "model_points": 400,
}


class ReportTests(SimpleTestCase):
    def test_format_value(self):
        self.assertEqual(format_value(None), "")
        self.assertEqual(format_value(True), "1")
        self.assertEqual(format_value(2.5), "2.500000")
        self.assertEqual(format_value(float("nan")), "nan")
        self.assertEqual(format_value(7), "7")
        self.assertEqual(format_value("radial"), "radial")

    def test_write_csv(self):
        tmp = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, tmp, ignore_errors=True)
        path = write_csv(
            [{"a": 1, "b": 0.25, "_private": "x"}, {"a": 2, "b": None}],
            os.path.join(tmp, "nested", "out.csv"),
            ("a", "b"),
        )
        with open(path, newline="") as f:
            self.assertEqual(list(csv.reader(f)), [["a", "b"], ["1", "0.250000"], ["2", ""]])


class SelftestTests(SimpleTestCase):
    def test_all_suites_pass(self):
        results = run_selftest(seed=1, instances=4)
        self.assertEqual(
            [r.name for r in results], ["sphere_rasterizer", "ray_rasterizer", "horn_roundtrip", "metric_oracles"]
        )
        self.assertTrue(all(r.passed for r in results), [r.detail for r in results])

    def test_corrupted_annulus_width_is_caught(self):
        self.assertTrue(run_selftest(seed=1, instances=3, mutate_annulus=0.5)[0].passed)
        results = run_selftest(seed=1, instances=5, mutate_annulus=0.4)
        self.assertFalse(results[0].passed)
        self.assertTrue(all(r.passed for r in results[1:]))


class RetryOnDbLockTests(SimpleTestCase):
    def test_retries_locked_database(self):
        calls = mock.Mock(side_effect=[OperationalError("database is locked"), "saved"])
        with mock.patch.object(db_utils.time, "sleep") as sleep, mock.patch.object(db_utils, "connection"):
            self.assertEqual(retry_on_db_lock(calls)(), "saved")
        self.assertEqual(calls.call_count, 2)
        sleep.assert_called_once_with(1.0)

    def test_other_errors_are_not_retried(self):
        calls = mock.Mock(side_effect=OperationalError("no such table: experiment_run"))
        with self.assertRaises(OperationalError):
            retry_on_db_lock(calls)()
        self.assertEqual(calls.call_count, 1)

    def test_gives_up_after_max_retries(self):
        calls = mock.Mock(side_effect=OperationalError("database is locked"))
        with mock.patch.object(db_utils.time, "sleep"), mock.patch.object(db_utils, "connection"):
            with self.assertRaises(OperationalError):
                retry_on_db_lock(max_retries=2, retry_delay=0.0)(calls)()
        self.assertEqual(calls.call_count, 2)


class ExperimentRunTests(TestCase):
    def test_finish_records_duration(self):
        run = ExperimentRun.objects.create(subcommand="selftest", start_time=timezone.now() - timedelta(seconds=3))
        run.finish({"horn": True}, "results/x.csv")
        run.refresh_from_db()
        self.assertEqual(run.status, "completed")
        self.assertGreaterEqual(run.duration, timedelta(seconds=3))
        self.assertEqual(run.summary, {"horn": True})

    def test_fail_records_exit_code(self):
        run = ExperimentRun.objects.create(subcommand="metrics")
        run.fail(ValueError("bad"), 3)
        run.refresh_from_db()
        self.assertEqual((run.status, run.exit_code, run.error), ("failed", 3, "bad"))


class RadvoteCommandTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)
        settings_override = override_settings(RADVOTE_LOG_DIR=os.path.join(self.tmp, "logs"))
        settings_override.enable()
        self.addCleanup(settings_override.disable)

    def path(self, name):
        return os.path.join(self.tmp, name)

    def write_config(self, name, data):
        with open(self.path(name), "w") as f:
            json.dump(data, f)
        return self.path(name)

    def radvote(self, *args):
        out = StringIO()
        call_command("radvote", *args, stdout=out, stderr=StringIO(), no_color=True)
        return out.getvalue()

    def assertExitCode(self, code, *args):
        with self.assertRaises(CommandError) as ctx:
            self.radvote(*args)
        self.assertEqual(ctx.exception.returncode, code)

    def test_usage_and_io_exit_codes(self):
        bad = self.write_config("bad.json", {"trials": 0})
        self.assertExitCode(1, "scheme-compare", "--config", bad)
        self.assertExitCode(1, "scheme-compare", "--threads", "0")
        self.assertExitCode(1, "dispersion", "--scale", "-1")
        self.assertExitCode(2, "scheme-compare", "--config", self.path("absent.json"))

    def test_threads_do_not_change_results(self):
        config = self.write_config("tiny.json", TINY_CONFIG)
        contents = []
        for threads in ("1", "2"):
            out = self.path(f"out_{threads}")
            self.radvote("scheme-compare", "--config", config, "--out", out, "--threads", threads)
            with open(os.path.join(out, "scheme_comparison.csv"), "rb") as f:
                contents.append(f.read())
            with open(os.path.join(out, "scheme_comparison_summary.json")) as f:
                self.assertEqual(json.load(f)["rows"], 2)
        self.assertEqual(contents[0], contents[1])

        runs = list(ExperimentRun.objects.order_by("start_time"))
        self.assertEqual([r.threads for r in runs], [1, 2])
        self.assertTrue(all(r.status == "completed" for r in runs))
        self.assertEqual(runs[0].experiment, "scheme_comparison")
        self.assertEqual(runs[0].config["trials"], 2)
        self.assertTrue(os.path.isfile(os.path.join(self.tmp, "logs", f"radvote_{runs[0].run_id}.log")))

    def test_command_line_overrides(self):
        config = self.write_config("tiny.json", TINY_CONFIG)
        out = self.path("out")
        self.radvote(
            "keypoints", "--config", config, "--out", out, "--trials", "1", "--keypoints", "3", "4", "--seed", "9"
        )
        run = ExperimentRun.objects.get()
        self.assertEqual(run.seed, 9)
        self.assertEqual(run.config["keypoint_counts"], [3, 4])
        with open(os.path.join(out, "keypoint_count.csv"), newline="") as f:
            self.assertEqual(len(list(csv.DictReader(f))), 2)

    def test_vote_once_writes_grids(self):
        config = self.write_config("tiny.json", TINY_CONFIG)
        out = self.path("out")
        text = self.radvote("vote-once", "--config", config, "--out", out, "--resolution", "8", "--object", "eggbox")
        self.assertIn("keypoint 2:", text)
        with open(os.path.join(out, "vote_once.csv"), newline="") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual([r["keypoint"] for r in rows], ["0", "1", "2"])
        for row in rows:
            self.assertTrue(os.path.isfile(row["grid"]))
            self.assertLessEqual(float(row["error_mm"]), 8.0)

    def test_metrics(self):
        rng = np.random.default_rng(0)
        save_ply(self.path("model.ply"), PointCloud(rng.normal(size=(200, 3))))
        poses = [("ring", RigidTransform(np.eye(3), [0.0, 0.0, 700.0 + i])) for i in range(4)]
        save_poses(self.path("gt.txt"), poses)
        save_poses(self.path("est.txt"), poses)
        out = self.path("out")
        self.radvote(
            "metrics", "--gt", self.path("gt.txt"), "--est", self.path("est.txt"),
            "--model", self.path("model.ply"), "--model-scale", "10", "--out", out,
        )
        run = ExperimentRun.objects.get()
        self.assertEqual(run.summary["poses"], 4)
        self.assertEqual(run.summary["accuracy"], 1.0)
        self.assertEqual(run.summary["auc"], 1.0)
        self.assertEqual(run.output_path, os.path.join(out, "metrics.csv"))

    def test_missing_model_fails_the_run(self):
        save_poses(self.path("gt.txt"), [("ring", RigidTransform.identity())])
        self.assertExitCode(
            2, "metrics", "--gt", self.path("gt.txt"), "--est", self.path("gt.txt"),
            "--model", self.path("absent.ply"), "--model-scale", "1",
        )
        run = ExperimentRun.objects.get()
        self.assertEqual((run.status, run.exit_code), ("failed", 2))

    def test_selftest_command(self):
        self.assertIn("PASS horn_roundtrip", self.radvote("selftest", "--instances", "3"))
        self.assertExitCode(3, "selftest", "--instances", "5", "--mutate-annulus", "0.4")
        statuses = list(ExperimentRun.objects.order_by("start_time").values_list("status", flat=True))
        self.assertEqual(statuses, ["completed", "failed"])

    def test_history(self):
        self.assertIn("No recorded runs", self.radvote("history"))
        ExperimentRun.objects.create(subcommand="selftest")
        self.assertIn("selftest", self.radvote("history", "--limit", "5"))
