"""Experiment harness: single runs, the sweep matrix, and the ablation table.

A matrix run sweeps labeled fraction x class count x seed x mode
(supervised baseline vs self-training), one cell at a time. Cells are
independent, deterministically seeded jobs; each finished cell writes a
marker file keyed by a hash of everything that defines it, so an
interrupted matrix resumes by skipping completed cells. Failures are
recorded per cell and the sweep continues. The median over seeds fills
the emitted tables.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from sslr import reference
from sslr.config import ConfigError, RunConfig
from sslr.data import (
    DatasetSplit,
    dataset_content_hash,
    load_dataset,
    mask_labels,
    split_train_val_test,
    subset_classes,
)
from sslr.model import SignClassifier
from sslr.pseudolabel import run_fsl_baseline, run_ssl

log = logging.getLogger("sslr.experiments")

MODES = ("fsl", "ssl")


@dataclass
class JobResult:
    """Everything a single training job produces, before any file I/O."""

    mode: str
    report: dict
    validation_accuracy: float | None
    test_accuracy: float | None
    curve_rows: list[tuple] | None
    model: SignClassifier
    dataset_hash: str
    class_names: list[str]
    degenerate_fsl: bool


def run_job(cfg: RunConfig, mode: str) -> JobResult:
    """Load data, split, mask labels, then train one model in ``mode``."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    path = cfg.get("data", "path")
    if not path:
        raise ConfigError("no dataset given: set data.path (or --set data.path=FILE)")
    dataset = load_dataset(path)
    samples, class_names = dataset.samples, dataset.class_names
    subset = cfg.get("split", "classes")
    if subset:
        samples, class_names = subset_classes(samples, class_names, subset)
    split_seed = cfg.get("split", "seed")
    train, val, test = split_train_val_test(samples, seed=split_seed,
                                            class_names=class_names)
    labeled, unlabeled, audit = mask_labels(train, cfg.get("split", "fraction"),
                                            seed=split_seed)
    # DatasetSplit validates the set algebra (disjoint ids, no labels on U).
    split = DatasetSplit(labeled=labeled, unlabeled=unlabeled, validation=val,
                         test=test, class_names=list(class_names),
                         audit_labels=audit)
    labeled, unlabeled = split.labeled, split.unlabeled
    val, test = split.validation, split.test
    model = SignClassifier(cfg.model_config(len(class_names)),
                           seed=cfg.get("train", "seed"))
    if mode == "fsl":
        train_report, test_eval = run_fsl_baseline(model, labeled, val, test,
                                                   cfg.train_config())
        val_acc = train_report.best_val_accuracy if train_report.val_accuracy else None
        return JobResult(
            mode=mode,
            report=train_report.to_dict(),
            validation_accuracy=val_acc,
            test_accuracy=None if test_eval is None else test_eval.accuracy,
            curve_rows=None,
            model=model,
            dataset_hash=dataset_content_hash(path),
            class_names=class_names,
            degenerate_fsl=False,
        )
    ssl_report = run_ssl(model, labeled, unlabeled, val, test, cfg.ssl_config(),
                         audit_labels=split.audit_labels)
    if ssl_report.cycles:
        val_acc = ssl_report.cycles[-1].validation_accuracy
    else:
        val_acc = ssl_report.initial_validation
    return JobResult(
        mode=mode,
        report=ssl_report.to_dict(),
        validation_accuracy=val_acc,
        test_accuracy=None if ssl_report.final_test is None
        else ssl_report.final_test.accuracy,
        curve_rows=ssl_report.curve_rows(),
        model=model,
        dataset_hash=dataset_content_hash(path),
        class_names=class_names,
        degenerate_fsl=ssl_report.degenerate_fsl,
    )


# -- matrix ------------------------------------------------------------


def cell_key(config_values: dict, dataset_hash: str, fraction: float,
             class_count: int, seed: int, mode: str) -> str:
    """Stable hash identifying one matrix cell and everything that shapes it."""
    relevant = {
        section: config_values[section]
        for section in ("model", "train", "ssl", "normalize", "augment")
    }
    payload = json.dumps(
        {"config": relevant, "dataset": dataset_hash, "fraction": fraction,
         "classes": class_count, "seed": seed, "mode": mode},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def run_matrix_cell(args: dict) -> dict:
    """One matrix cell; module-level so process pools can pickle it."""
    cfg = RunConfig(values=args["config"])
    cfg.set("split.fraction", str(args["fraction"]))
    cfg.set("split.classes", str(args["class_count"]))
    cfg.set("split.seed", str(args["seed"]))
    cfg.set("train.seed", str(args["seed"]))
    result = run_job(cfg, args["mode"])
    record = {
        "status": "ok",
        "fraction": args["fraction"],
        "class_count": args["class_count"],
        "seed": args["seed"],
        "mode": args["mode"],
        "test_accuracy": result.test_accuracy,
        "validation_accuracy": result.validation_accuracy,
        "degenerate_fsl": result.degenerate_fsl,
    }
    _write_json_atomic(Path(args["marker_path"]), record)
    return record


def _write_json_atomic(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)


def run_matrix(cfg: RunConfig, out_dir: Path) -> dict:
    """Sweep all cells, resuming past completed ones; emit the result tables."""
    path = cfg.get("data", "path")
    if not path:
        raise ConfigError("no dataset given: set data.path (or --set data.path=FILE)")
    dataset_hash = dataset_content_hash(path)
    fractions = cfg.get("matrix", "fractions")
    class_counts = cfg.get("matrix", "class_counts")
    seeds = cfg.get("matrix", "seeds")
    modes = cfg.get("matrix", "modes")
    for mode in modes:
        if mode not in MODES:
            raise ConfigError(f"matrix.modes entries must be fsl or ssl, got {mode!r}")

    cells_dir = out_dir / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    pending: list[dict] = []
    completed: dict[str, dict] = {}
    order: list[str] = []
    for fraction in fractions:
        for class_count in class_counts:
            for seed in seeds:
                for mode in modes:
                    key = cell_key(cfg.values, dataset_hash, fraction,
                                   class_count, seed, mode)
                    order.append(key)
                    marker = cells_dir / f"{key}.json"
                    if marker.is_file():
                        completed[key] = json.loads(marker.read_text(encoding="utf-8"))
                        continue
                    pending.append({
                        "config": cfg.to_dict(),
                        "fraction": fraction,
                        "class_count": class_count,
                        "seed": seed,
                        "mode": mode,
                        "marker_path": str(marker),
                        "key": key,
                    })

    log.info("matrix: %d cells total, %d already complete, %d to run",
             len(order), len(completed), len(pending))
    failures: list[dict] = []
    workers = max(1, cfg.get("matrix", "workers"))
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_matrix_cell, args): args for args in pending}
            for future, args in futures.items():
                try:
                    completed[args["key"]] = future.result()
                except Exception as exc:  # recorded, matrix continues
                    failures.append({**_cell_id(args), "error": str(exc)})
                    log.warning("cell %s failed: %s", _cell_id(args), exc)
    else:
        for args in pending:
            try:
                completed[args["key"]] = run_matrix_cell(args)
            except Exception as exc:
                failures.append({**_cell_id(args), "error": str(exc)})
                log.warning("cell %s failed: %s", _cell_id(args), exc)

    tables = emit_matrix_tables(cfg, completed, out_dir, dataset_hash)
    if failures:
        with (out_dir / "failures.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["fraction", "class_count", "seed", "mode", "error"])
            writer.writeheader()
            writer.writerows(failures)
    return {
        "cells_total": len(order),
        "cells_failed": len(failures),
        "tables": tables,
    }


def _cell_id(args: dict) -> dict:
    return {k: args[k] for k in ("fraction", "class_count", "seed", "mode")}


def _median_accuracy(records: list[dict]) -> float | None:
    values = [r["test_accuracy"] for r in records if r.get("test_accuracy") is not None]
    if not values:
        return None
    return float(np.median(values))


def emit_matrix_tables(cfg: RunConfig, completed: dict[str, dict],
                       out_dir: Path, dataset_hash: str) -> dict:
    """Write the by-classes grid, the by-fraction slice, and raw cell rows."""
    fractions = cfg.get("matrix", "fractions")
    class_counts = cfg.get("matrix", "class_counts")
    seeds = cfg.get("matrix", "seeds")
    modes = cfg.get("matrix", "modes")

    def cell_records(fraction, class_count, mode):
        records = []
        for seed in seeds:
            key = cell_key(cfg.values, dataset_hash, fraction, class_count,
                           seed, mode)
            if key in completed and completed[key].get("status") == "ok":
                records.append(completed[key])
        return records

    by_classes = out_dir / "matrix_by_classes.csv"
    with by_classes.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(reference.by_classes_header(class_counts))
        for fraction in fractions:
            row: list[Any] = [reference.fraction_percent(fraction)]
            for count in class_counts:
                for mode in MODES:
                    if mode in modes:
                        median = _median_accuracy(cell_records(fraction, count, mode))
                        row.append("" if median is None else repr(median))
                    else:
                        row.append("")
            writer.writerow(row)

    slice_count = max(class_counts)
    by_fraction = out_dir / "matrix_by_fraction.csv"
    with by_fraction.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(reference.by_fraction_header(fractions))
        for mode in MODES:
            row = [mode.upper()]
            for fraction in fractions:
                if mode in modes:
                    median = _median_accuracy(cell_records(fraction, slice_count, mode))
                    row.append("" if median is None else repr(median))
                else:
                    row.append("")
            writer.writerow(row)

    cells_csv = out_dir / "cells.csv"
    with cells_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "fraction", "class_count", "seed", "mode", "test_accuracy",
            "validation_accuracy", "status"])
        writer.writeheader()
        for fraction in fractions:
            for count in class_counts:
                for seed in seeds:
                    for mode in modes:
                        key = cell_key(cfg.values, dataset_hash, fraction, count,
                                       seed, mode)
                        record = completed.get(key)
                        if record is None:
                            writer.writerow({"fraction": fraction, "class_count": count,
                                             "seed": seed, "mode": mode,
                                             "test_accuracy": "",
                                             "validation_accuracy": "",
                                             "status": "failed"})
                        else:
                            writer.writerow({
                                "fraction": fraction, "class_count": count,
                                "seed": seed, "mode": mode,
                                "test_accuracy": repr(record["test_accuracy"]),
                                "validation_accuracy": repr(record["validation_accuracy"]),
                                "status": record.get("status", "ok")})

    return {
        "by_classes": str(by_classes),
        "by_fraction": str(by_fraction),
        "cells": str(cells_csv),
    }


# -- ablation ----------------------------------------------------------


def run_ablation(cfg: RunConfig, out_dir: Path) -> list[dict]:
    """Run the five cumulative preprocessing toggles and emit the table.

    Row order and toggle pattern are fixed: nothing on; normalization;
    +noise; +rotation; +shear. Reference accuracies ride along as
    annotation columns. Each row retrains the supervised model from the
    same seed with only the preprocessing toggles changed.
    """
    rows = []
    for shear, rotation, noise, normalization, ref_val, ref_test in reference.ABLATION_ROWS:
        row_cfg = RunConfig(values=cfg.to_dict())
        row_cfg.set("normalize.enabled", str(normalization).lower())
        row_cfg.set("augment.noise", str(noise).lower())
        # The rotation toggle covers both rotations (in-plane and arm).
        row_cfg.set("augment.rotation", str(rotation).lower())
        row_cfg.set("augment.arm_rotation", str(rotation).lower())
        row_cfg.set("augment.shear", str(shear).lower())
        result = run_job(row_cfg, "fsl")
        rows.append({
            "shear": shear,
            "rotation": rotation,
            "gaussian_noise": noise,
            "normalization": normalization,
            "validation_accuracy": result.validation_accuracy,
            "test_accuracy": result.test_accuracy,
            "reference_val": ref_val,
            "reference_test": ref_test,
        })
        log.info("ablation row %s -> test %.4f", rows[-1], result.test_accuracy or -1)

    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "shear", "rotation", "gaussian_noise", "normalization",
            "validation_accuracy", "test_accuracy", "reference_val", "reference_test"])
        writer.writeheader()
        writer.writerows(rows)
    return rows
