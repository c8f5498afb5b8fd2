"""``manage.py radvote <subcommand>``: experiments, single votes, metrics, selftest, history.

Exit codes: 0 success, 1 usage or configuration, 2 file IO, 3 numerical failure.
"""

import dataclasses
import logging
import os
import sys

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import BaseCommand, CommandError
from django.db import connection

from accumulator.dump import save_grid
from accumulator.peaks import find_peak
from accumulator.voting import cast_votes
from cli.db_utils import retry_on_db_lock
from cli.models import ExperimentRun
from cli.report import format_value, summary_lines, write_csv, write_summary
from cli.selftest import run_selftest
from core.config import get_defaults, project_version
from core.errors import ConfigError, DataIOError, RadvoteError
from data_io.config import load_config
from data_io.manifest import load_manifest
from data_io.ply import load_ply
from data_io.poses import load_poses
from geometry.types import CameraIntrinsics
from pose_pipeline.estimation import grid_for_map, keypoint_errors, oracle_padding
from pose_pipeline.experiments import keypoints_for, run_experiment, trial_seed_sequence
from pose_pipeline.metrics import accuracy_at_threshold, add_metric, adds_metric, auc_metric
from pose_pipeline.objects import PRESETS, ModelObject, preset_object
from pose_pipeline.scene import random_pose, render_frame
from pose_pipeline.specs import ExperimentKind, ExperimentSpec, KeypointSetKind, NoiseConfig
from vote_maps.noise import apply_noise
from vote_maps.schemes import SchemeKind

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3

EXPERIMENT_SUBCOMMANDS = {
    "scheme-compare": ExperimentKind.SCHEME_COMPARISON,
    "dispersion": ExperimentKind.DISPERSION_SWEEP,
    "resolution": ExperimentKind.RESOLUTION_SWEEP,
    "keypoints": ExperimentKind.KEYPOINT_COUNT,
    "ensemble": ExperimentKind.ENSEMBLE,
}
METRIC_COLUMNS = ("index", "object", "add", "adds", "scored", "correct")
VOTE_ONCE_COLUMNS = ("keypoint", "x", "y", "z", "error_mm", "peak_count", "votes", "drops", "grid")


def exit_code_for(error) -> int:
    if isinstance(error, ConfigError):
        return EXIT_USAGE
    if isinstance(error, (DataIOError, OSError)):
        return EXIT_IO
    return EXIT_NUMERICAL


def attach_run_log(run_id):
    """Per-run log file ``radvote_<run_id>.log`` next to the console output."""
    log_dir = settings.RADVOTE_LOG_DIR
    os.makedirs(log_dir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(log_dir, f"radvote_{run_id}.log"), encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
    logging.getLogger().addHandler(handler)
    return handler


def detach_run_log(handler):
    logging.getLogger().removeHandler(handler)
    handler.close()


def ensure_history_table():
    if not settings.RADVOTE_AUTOMIGRATE:
        return
    if ExperimentRun._meta.db_table not in connection.introspection.table_names():
        call_command("migrate", "cli", verbosity=0, interactive=False)


@retry_on_db_lock
def start_run(subcommand, experiment="", config=None, seed=None, threads=1):
    return ExperimentRun.objects.create(
        subcommand=subcommand, experiment=experiment, config=config or {}, seed=seed, threads=threads
    )


class Command(BaseCommand):
    help = "Radial keypoint voting experiments and tools"

    def create_parser(self, prog_name, subcommand, **kwargs):
        # usage errors in the parser and its subparsers raise CommandError
        # (exit code 1) instead of exiting with argparse's status 2
        from_command_line = getattr(self, "_called_from_command_line", None)
        self._called_from_command_line = False
        try:
            return super().create_parser(prog_name, subcommand, **kwargs)
        finally:
            self._called_from_command_line = from_command_line

    def run_from_argv(self, argv):
        try:
            super().run_from_argv(argv)
        except CommandError as e:
            self.stderr.write(f"CommandError: {e}")
            sys.exit(e.returncode)

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest="subcommand", required=True)

        for name, kind in EXPERIMENT_SUBCOMMANDS.items():
            sub = subparsers.add_parser(name, help=f"Run the {kind.value} experiment")
            self._common_arguments(sub)
            sub.add_argument("--resolution", type=float, nargs="+", help="Voxel size(s) in mm")
            sub.add_argument("--scheme", nargs="+", choices=[s.value for s in SchemeKind], help="Voting schemes")
            sub.add_argument("--noise-sigma", type=float, help="Multiplier on the configured noise magnitudes (0 = noiseless)")
            sub.add_argument("--noise-profile", help="Named noise profile from config.json")
            sub.add_argument("--scale", type=float, nargs="+", help="Dispersion scales (multiples of the object radius)")
            sub.add_argument("--keypoints", type=int, nargs="+", help="Keypoint counts")
            sub.add_argument("--trials", type=int, help="Trials per object")
            sub.add_argument("--icp", action="store_true", help="Also report ICP-refined poses")

        vote = subparsers.add_parser("vote-once", help="Vote one synthetic or dataset frame and dump the grids")
        self._common_arguments(vote)
        vote.add_argument("--object", default="ape", choices=sorted(PRESETS), help="Synthetic object")
        vote.add_argument("--manifest", help="Dataset manifest; votes on one of its entries instead")
        vote.add_argument("--entry", type=int, default=0, help="Manifest entry index")
        vote.add_argument("--resolution", type=float, nargs="+", help="Voxel size in mm (first value used)")
        vote.add_argument("--scheme", nargs="+", choices=[s.value for s in SchemeKind], help="Voting scheme (first value used)")
        vote.add_argument("--noise-sigma", type=float, help="Multiplier on the configured noise magnitudes")
        vote.add_argument("--keypoints", type=int, nargs="+", help="Keypoint count (first value used)")
        vote.add_argument("--keypoint-set", choices=[k.value for k in KeypointSetKind], default="disperse")
        vote.add_argument("--no-dump", action="store_true", help="Skip writing the accumulator dumps")

        metrics = subparsers.add_parser("metrics", help="ADD / ADD-S / accuracy / AUC for pose files")
        metrics.add_argument("--gt", required=True, help="Ground-truth pose file")
        metrics.add_argument("--est", required=True, help="Estimated pose file")
        metrics.add_argument("--model", required=True, help="Model PLY")
        metrics.add_argument("--model-scale", type=float, required=True, help="mm per model unit")
        metrics.add_argument("--symmetric", action="store_true", help="Score with ADD-S")
        metrics.add_argument("--out", help="Output directory")
        metrics.add_argument("--auc-max", type=float, default=None, help="AUC threshold range in mm")

        selftest = subparsers.add_parser("selftest", help="Oracle-equivalence checks")
        selftest.add_argument("--seed", type=int, default=0)
        selftest.add_argument("--instances", type=int, default=25)
        selftest.add_argument("--mutate-annulus", type=float, default=None, help="Run the sphere kernel with this annulus half-width instead of 0.5 (the suite must fail)")

        history = subparsers.add_parser("history", help="List recorded runs")
        history.add_argument("--limit", type=int, default=10)

    def _common_arguments(self, sub):
        sub.add_argument("--config", help="Experiment configuration (JSON)")
        sub.add_argument("--out", help="Output directory")
        sub.add_argument("--seed", type=int, help="Base seed")
        sub.add_argument("--threads", type=int, default=1, help="Worker threads")

    def handle(self, *args, **options):
        subcommand = options["subcommand"]
        if subcommand == "history":
            return self.show_history(options["limit"])
        if options.get("threads") is not None and options["threads"] < 1:
            raise CommandError("--threads must be at least 1", returncode=EXIT_USAGE)

        ensure_history_table()
        try:
            spec = self.build_spec(subcommand, options) if subcommand in EXPERIMENT_SUBCOMMANDS else None
        except RadvoteError as e:
            raise CommandError(str(e), returncode=exit_code_for(e))
        run = start_run(
            subcommand,
            experiment=spec.experiment.value if spec else "",
            config=spec.to_dict() if spec else {k: v for k, v in options.items() if k in ("seed", "object", "scheme", "resolution")},
            seed=spec.seed if spec else options.get("seed"),
            threads=options.get("threads") or 1,
        )
        handler = attach_run_log(run.run_id)
        logger.info(f"{project_version()} run {run.run_id}: {subcommand}")
        try:
            if spec is not None:
                summary, output = self.experiment(spec, options)
            elif subcommand == "vote-once":
                summary, output = self.vote_once(options)
            elif subcommand == "metrics":
                summary, output = self.metrics(options)
            else:
                summary, output = self.selftest(options)
        except CommandError as e:
            retry_on_db_lock(run.fail)(e, e.returncode)
            raise
        except (RadvoteError, OSError) as e:
            code = exit_code_for(e)
            retry_on_db_lock(run.fail)(e, code)
            raise CommandError(str(e), returncode=code)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
            retry_on_db_lock(run.fail)(e, EXIT_NUMERICAL)
            raise CommandError(f"Numerical failure: {e}", returncode=EXIT_NUMERICAL)
        finally:
            detach_run_log(handler)
        retry_on_db_lock(run.finish)(summary, output)

    def build_spec(self, subcommand, options) -> ExperimentSpec:
        spec = load_config(options["config"]) if options.get("config") else ExperimentSpec()
        changes = {"experiment": EXPERIMENT_SUBCOMMANDS[subcommand]}
        if options.get("seed") is not None:
            changes["seed"] = options["seed"]
        if options.get("resolution"):
            if any(r <= 0 for r in options["resolution"]):
                raise ConfigError("--resolution", "must be positive")
            changes["resolutions_mm"] = tuple(options["resolution"])
        if options.get("scheme"):
            changes["schemes"] = tuple(options["scheme"])
        if options.get("scale"):
            if any(s <= 0 for s in options["scale"]):
                raise ConfigError("--scale", "must be positive")
            changes["scales"] = tuple(options["scale"])
        if options.get("keypoints"):
            if any(k < 3 for k in options["keypoints"]):
                raise ConfigError("--keypoints", "at least 3 keypoints are needed for a pose")
            changes["keypoint_counts"] = tuple(options["keypoints"])
        if options.get("trials") is not None:
            if options["trials"] < 1:
                raise ConfigError("--trials", "must be at least 1")
            changes["trials"] = options["trials"]
        if options.get("icp"):
            changes["icp"] = True
        noise = spec.noise
        if options.get("noise_profile"):
            try:
                noise = NoiseConfig.from_profile(options["noise_profile"])
            except KeyError as e:
                raise ConfigError("--noise-profile", e.args[0]) from None
        if options.get("noise_sigma") is not None:
            if options["noise_sigma"] < 0:
                raise ConfigError("--noise-sigma", "must be non-negative")
            noise = noise.scaled(options["noise_sigma"])
        changes["noise"] = noise
        return dataclasses.replace(spec, **changes)

    def output_dir(self, options, spec=None) -> str:
        out = options.get("out") or (spec.paths.get("output_dir") if spec else None) or "results"
        os.makedirs(out, exist_ok=True)
        return out

    def experiment(self, spec, options):
        out = self.output_dir(options, spec)
        report = run_experiment(spec, workers=options["threads"])
        csv_path = write_csv(report.rows, os.path.join(out, f"{spec.experiment.value}.csv"))
        write_summary(report, os.path.join(out, f"{spec.experiment.value}_summary.json"), spec)
        for line in summary_lines(report):
            self.stdout.write(line)
        self.stdout.write(self.style.SUCCESS(f"Wrote {csv_path}"))
        summary = {
            "rows": len(report.rows),
            "mean_kp_error": report.mean_kp_error,
            "accuracy": report.accuracy_at_threshold,
            "auc": report.auc,
        }
        return summary, csv_path

    def vote_once(self, options):
        defaults = get_defaults()
        spec = load_config(options["config"]) if options.get("config") else ExperimentSpec()
        seed = options["seed"] if options.get("seed") is not None else spec.seed
        resolution = (options.get("resolution") or [defaults["resolution_mm"]])[0]
        if resolution <= 0:
            raise ConfigError("--resolution", "must be positive")
        scheme = SchemeKind.parse((options.get("scheme") or ["radial"])[0])
        count = (options.get("keypoints") or [defaults["keypoint_count"]])[0]
        noise = spec.noise if options.get("noise_sigma") is None else spec.noise.scaled(options["noise_sigma"])
        rng = np.random.default_rng(trial_seed_sequence(seed, 0, 0))

        intrinsics = CameraIntrinsics.linemod()
        depth = None
        if options.get("manifest"):
            entries = load_manifest(options["manifest"])
            if not 0 <= options["entry"] < len(entries):
                raise ConfigError("--entry", f"manifest has {len(entries)} entries")
            entry = entries[options["entry"]]
            obj = ModelObject(entry.object_id, entry.load_model(), entry.symmetric)
            pose, intrinsics = entry.gt_pose, entry.intrinsics
            if entry.depth_path is not None:
                depth = entry.load_frame().depth
        else:
            obj = preset_object(options["object"], spec.model_points, seed)
            pose = random_pose(rng, obj)

        keypoints = keypoints_for(obj, KeypointSetKind(options["keypoint_set"]), count)
        frame = render_frame(obj, pose, keypoints, [scheme], intrinsics, with_background=noise.mask_flip_rate > 0)
        maps = [
            apply_noise(m, noise.spec_for(scheme, int(rng.integers(0, 2**32)))) for m in frame.maps_for(scheme)
        ]
        padding = oracle_padding(maps, depth) + 2.0 * resolution

        out = self.output_dir(options, spec)
        rows = []
        for j, vote_map in enumerate(maps):
            grid = grid_for_map(vote_map, resolution, padding, depth, max_grid_mb=spec.max_grid_mb)
            stats = cast_votes(grid, vote_map, depth, sample=spec.vote_sample, seed=seed + j, workers=options["threads"])
            peak = find_peak(grid)
            error = float(keypoint_errors(peak.location, frame.camera_keypoints[j])[0])
            dump = ""
            if not options["no_dump"]:
                dump = os.path.join(out, f"vote_once_{scheme.value}_kp{j}.rvag")
                save_grid(grid, dump)
            rows.append(
                {
                    "keypoint": j,
                    "x": float(peak.location[0]),
                    "y": float(peak.location[1]),
                    "z": float(peak.location[2]),
                    "error_mm": error,
                    "peak_count": peak.count,
                    "votes": stats.votes,
                    "drops": stats.dropped,
                    "grid": dump,
                }
            )
            self.stdout.write(f"keypoint {j}: error {error:.3f} mm, peak {peak.count} votes, grid {grid.dims}")
        csv_path = write_csv(rows, os.path.join(out, "vote_once.csv"), VOTE_ONCE_COLUMNS)
        errors = [r["error_mm"] for r in rows]
        return {"object": obj.name, "scheme": scheme.value, "mean_error_mm": float(np.mean(errors))}, csv_path

    def metrics(self, options):
        model = load_ply(options["model"], options["model_scale"])
        gt_poses = load_poses(options["gt"])
        est_poses = load_poses(options["est"])
        if len(gt_poses) != len(est_poses):
            raise ConfigError("--est", f"{len(est_poses)} poses for {len(gt_poses)} ground-truth poses")
        auc_max = options["auc_max"] if options["auc_max"] is not None else get_defaults()["auc_max_mm"]
        fraction = get_defaults()["accuracy_fraction"]

        rows = []
        for index, ((gt_id, gt), (est_id, est)) in enumerate(zip(gt_poses, est_poses)):
            if gt_id != est_id:
                raise ConfigError("--est", f"pose {index} is for '{est_id}', ground truth is '{gt_id}'")
            add = add_metric(model, gt, est)
            adds = adds_metric(model, gt, est)
            scored = adds if options["symmetric"] else add
            rows.append(
                {
                    "index": index,
                    "object": gt_id,
                    "add": add,
                    "adds": adds,
                    "scored": scored,
                    "correct": scored < fraction * model.radius,
                }
            )
        scored = [r["scored"] for r in rows]
        summary = {
            "poses": len(rows),
            "accuracy": accuracy_at_threshold(scored, model.radius, fraction),
            "auc": auc_metric(scored, auc_max),
            "mean_add": float(np.mean([r["add"] for r in rows])),
            "mean_adds": float(np.mean([r["adds"] for r in rows])),
        }
        out = self.output_dir(options)
        csv_path = write_csv(rows, os.path.join(out, "metrics.csv"), METRIC_COLUMNS)
        self.stdout.write(
            f"{len(rows)} poses  accuracy={summary['accuracy']:.4f}  auc={summary['auc']:.4f}  "
            f"ADD={format_value(summary['mean_add'])} ADD-S={format_value(summary['mean_adds'])} mm"
        )
        return summary, csv_path

    def selftest(self, options):
        results = run_selftest(options["seed"], options["instances"], options["mutate_annulus"])
        for result in results:
            status = self.style.SUCCESS("PASS") if result.passed else self.style.ERROR("FAIL")
            self.stdout.write(
                f"{status} {result.name}: {result.checked - result.failures}/{result.checked} "
                f"({result.seconds:.2f} s) {result.detail}"
            )
        failed = [r.name for r in results if not r.passed]
        if failed:
            raise CommandError(f"Selftest failed: {', '.join(failed)}", returncode=EXIT_NUMERICAL)
        return {r.name: r.passed for r in results}, ""

    def show_history(self, limit):
        ensure_history_table()
        runs = ExperimentRun.objects.all()[: max(limit, 0)]
        for run in runs:
            duration = f"{run.duration.total_seconds():.1f}s" if run.duration else "-"
            self.stdout.write(
                f"{run.start_time:%Y-%m-%d %H:%M:%S}  {run.subcommand:<15} {run.status:<10} {duration:>8}  "
                f"{run.run_id}  {run.output_path}"
            )
        if not runs:
            self.stdout.write("No recorded runs")
