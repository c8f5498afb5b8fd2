"""CSV and JSON output for experiment reports."""

import csv
import json
import logging
import math
import os

from pose_pipeline.experiments import CSV_COLUMNS, GROUP_KEYS

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "{:.6f}"


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return FLOAT_FORMAT.format(value)
    return str(value)


def write_csv(rows, path, columns=CSV_COLUMNS) -> str:
    """Tidy CSV, one row per trial row; private fields are left out."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(c)) for c in columns])
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return str(path)


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def report_summary(report, spec=None) -> dict:
    summary = {
        "experiment": report.experiment,
        "rows": len(report.rows),
        "mean_kp_error": _jsonable(report.mean_kp_error),
        "kp_error_std": _jsonable(report.kp_error_std),
        "accuracy": _jsonable(report.accuracy_at_threshold),
        "auc": _jsonable(report.auc),
        "groups": [{k: _jsonable(v) for k, v in g.items()} for g in report.groups],
    }
    if spec is not None:
        summary["config"] = spec.to_dict()
    return summary


def write_summary(report, path, spec=None) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report_summary(report, spec), f, ensure_ascii=False, indent=2)
    return str(path)


def summary_lines(report) -> list:
    """One line per group: the keys that vary, then mu/sigma of the keypoint error and the pose scores."""
    lines = []
    for group in report.groups:
        keys = " ".join(f"{k}={format_value(group[k])}" for k in GROUP_KEYS if group[k] not in (None, ""))
        lines.append(
            f"{keys}  mu={group['eps_mu']:.3f} sigma={group['eps_sigma']:.3f} mm  "
            f"ADD={group['add_mean']:.3f} ADD-S={group['adds_mean']:.3f} mm  "
            f"acc={group['accuracy']:.3f} auc={group['auc']:.3f}"
        )
    return lines
