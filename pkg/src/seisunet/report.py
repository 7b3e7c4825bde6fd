"""Run artefacts: ``report.json``, loss-curve and DSC tables, difference images."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .grid import export_image, write_json
from .metrics import difference_image
from .train import CrossValReport

__all__ = ["REPORT_SCHEMA", "LOSS_HEADER", "DSC_HEADER", "emit_report", "load_report", "write_tables"]

LOSS_HEADER = ["fold", "epoch", "train_mse", "val_mse"]
DSC_HEADER = ["fold", "sample", "dsc"]

_FIVE = {
    "type": "object",
    "required": ["fold", "min", "q1", "median", "q3", "max"],
    "properties": {
        "fold": {"type": "integer", "minimum": 0},
        **{k: {"type": "number", "minimum": 0, "maximum": 1} for k in ("min", "q1", "median", "q3", "max")},
    },
    "additionalProperties": False,
}

_FOLD = {
    "type": "object",
    "required": [
        "fold_index", "train_loss_curve", "val_loss_curve", "best_epoch", "test_dsc_per_sample",
        "test_mse", "val_mse", "initial_train_mse", "test_idx", "norm_min", "norm_max",
    ],
    "properties": {
        "fold_index": {"type": "integer", "minimum": 0},
        "train_loss_curve": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "val_loss_curve": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "best_epoch": {"type": "integer", "minimum": 0},
        "test_dsc_per_sample": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "test_mse": {"type": "number", "minimum": 0},
        "val_mse": {"type": "number", "minimum": 0},
        "initial_train_mse": {"type": "number", "minimum": 0},
        "test_idx": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "norm_min": {"type": "number"},
        "norm_max": {"type": "number"},
    },
    "additionalProperties": False,
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["architecture", "mean_val_mse", "median_test_dsc", "fold_median_dsc_iqr",
                 "dsc_summary", "fold_results"],
    "properties": {
        "architecture": {"enum": ["unet", "unet_mod"]},
        "mean_val_mse": {"type": "number", "minimum": 0},
        "median_test_dsc": {"type": "number", "minimum": 0, "maximum": 1},
        "fold_median_dsc_iqr": {"type": "number", "minimum": 0, "maximum": 1},
        "dsc_summary": {"type": "array", "items": _FIVE},
        "fold_results": {"type": "array", "items": _FOLD, "minItems": 1},
    },
    "additionalProperties": False,
}


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_tables(report: CrossValReport, out_dir):
    out_dir = Path(out_dir)
    _write_csv(
        out_dir / "loss_curves.csv",
        LOSS_HEADER,
        (
            (f.fold_index, e, repr(float(tr)), repr(float(va)))
            for f in report.fold_results
            for e, (tr, va) in enumerate(zip(f.train_loss_curve, f.val_loss_curve))
        ),
    )
    _write_csv(
        out_dir / "dsc_folds.csv",
        DSC_HEADER,
        (
            (f.fold_index, s, repr(float(d)))
            for f in report.fold_results
            for s, d in zip(f.test_idx, f.test_dsc_per_sample)
        ),
    )


def _ranked_samples(report):
    ranked = []
    for f in report.fold_results:
        if f.test_predictions is None:
            continue
        for j, (sample, d) in enumerate(zip(f.test_idx, f.test_dsc_per_sample)):
            ranked.append((d, f.fold_index, sample, f, j))
    ranked.sort(key=lambda r: (-r[0], r[1], r[2]))
    return ranked


def write_difference_images(report, out_dir, n=3):
    """Prediction, truth and signed difference for the ``n`` best and worst test samples."""
    out_dir = Path(out_dir) / "images"
    ranked = _ranked_samples(report)
    if not ranked:
        return []
    picks = [("best", i + 1, r) for i, r in enumerate(ranked[:n])]
    picks += [("worst", i + 1, r) for i, r in enumerate(ranked[::-1][:n])]
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for tag, rank, (_, fold, sample, f, j) in picks:
        stem = out_dir / f"{tag}{rank}_fold{fold:02d}_sample{sample:04d}"
        pred, truth = f.test_predictions[j, 0], f.test_targets[j, 0]
        export_image(np.clip(pred, 0, 1), f"{stem}_pred.pgm")
        export_image(truth, f"{stem}_truth.pgm")
        export_image(difference_image(pred, truth), f"{stem}_diff.pgm", colormap="gray-symmetric")
        written.append(f"{stem}_diff.pgm")
    return written


def emit_report(report: CrossValReport, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(report.to_dict(), out_dir / "report.json")
    write_tables(report, out_dir)
    write_difference_images(report, out_dir)


def load_report(path) -> CrossValReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return CrossValReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
