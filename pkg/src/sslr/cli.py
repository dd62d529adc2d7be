"""Command-line driver.

Commands: ``synth`` (generate a synthetic dataset), ``split`` (write a
split manifest), ``train`` (supervised baseline), ``ssl`` (pseudo-label
self-training), ``matrix`` (the fraction x class-count sweep), ``ablate``
(preprocessing toggle table), ``eval`` (re-score a checkpoint).

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
Failures print exactly one machine-parsable JSON line to stderr. The
``SSLR_LOG`` environment variable (debug/info/warning/error) controls log
verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from sslr import __version__
from sslr.config import ConfigError, RunConfig, load_config
from sslr.data import (
    dataset_content_hash,
    generate_synthetic,
    load_dataset,
    mask_labels,
    save_dataset,
    split_train_val_test,
    subset_classes,
)
from sslr.experiments import run_ablation, run_job, run_matrix
from sslr.model import SignClassifier
from sslr.training import evaluate

log = logging.getLogger("sslr")


class CliUsageError(ValueError):
    """Bad flags or arguments; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line errors instead of usage dumps
        raise CliUsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sslr", description=__doc__)
    parser.add_argument("--version", action="version", version=f"sslr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic pose dataset")
    synth.add_argument("--classes", type=int, required=True)
    synth.add_argument("--per-class", type=int, required=True)
    synth.add_argument("--frames", type=int, required=True)
    synth.add_argument("--sigma", type=float, default=0.05)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="output dataset file")

    split = sub.add_parser("split", help="write a train/val/test + label-mask manifest")
    _common_flags(split)

    for name, help_text in (
        ("train", "train the supervised baseline"),
        ("ssl", "run pseudo-label self-training"),
        ("matrix", "run the labeled-fraction x class-count sweep"),
        ("ablate", "run the preprocessing toggle table"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        _common_flags(cmd, config_required=True)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _common_flags(ev, config_required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", choices=["train", "val", "test"], default="test")
    return parser


def _common_flags(cmd: argparse.ArgumentParser, config_required: bool = False) -> None:
    cmd.add_argument("--config", required=config_required,
                     help="run configuration file")
    cmd.add_argument("--seed", type=int, default=None,
                     help="override split.seed and train.seed together")
    cmd.add_argument("--out", default=None, help="override output.dir")
    cmd.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="SECTION.KEY=VALUE", help="override one config value")


def _resolve_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None), overrides=args.overrides)
    if args.seed is not None:
        cfg.set("split.seed", str(args.seed))
        cfg.set("train.seed", str(args.seed))
    if args.out is not None:
        cfg.set("output.dir", args.out)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.get("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_report(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    log.info("wrote %s", path)


def cmd_synth(args) -> int:
    dataset = generate_synthetic(args.classes, args.per_class, args.frames,
                                 noise_sigma=args.sigma, seed=args.seed)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    print(json.dumps({"dataset": str(out), "samples": len(dataset.samples),
                      "classes": len(dataset.class_names), "seed": args.seed}))
    return 0


def cmd_split(args) -> int:
    cfg = _resolve_config(args)
    path = cfg.get("data", "path")
    if not path:
        raise ConfigError("no dataset given: set data.path (or --set data.path=FILE)")
    dataset = load_dataset(path)
    samples, class_names = dataset.samples, dataset.class_names
    if cfg.get("split", "classes"):
        samples, class_names = subset_classes(samples, class_names,
                                              cfg.get("split", "classes"))
    seed = cfg.get("split", "seed")
    train, val, test = split_train_val_test(samples, seed=seed,
                                            class_names=class_names)
    labeled, unlabeled, _ = mask_labels(train, cfg.get("split", "fraction"), seed=seed)
    manifest = {
        "dataset": str(path),
        "dataset_hash": dataset_content_hash(path),
        "seed": seed,
        "fraction": cfg.get("split", "fraction"),
        "classes": class_names,
        "labeled_ids": sorted(s.id for s in labeled),
        "unlabeled_ids": sorted(s.id for s in unlabeled),
        "validation_ids": sorted(s.id for s in val),
        "test_ids": sorted(s.id for s in test),
    }
    out = _out_dir(cfg) / "split_manifest.json"
    _write_report(out, manifest)
    print(json.dumps({"manifest": str(out), "labeled": len(labeled),
                      "unlabeled": len(unlabeled), "validation": len(val),
                      "test": len(test)}))
    return 0


def _run_training_command(args, mode: str) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    result = run_job(cfg, mode)
    checkpoint = out / "checkpoint.npz"
    result.model.save(checkpoint)
    report = {
        "command": mode,
        "config": cfg.to_dict(),
        "dataset_hash": result.dataset_hash,
        "class_names": result.class_names,
        "report": result.report,
        "validation_accuracy": result.validation_accuracy,
        "test_accuracy": result.test_accuracy,
        "degenerate_fsl": result.degenerate_fsl,
        "checkpoint": str(checkpoint),
    }
    _write_report(out / "report.json", report)
    if result.curve_rows is not None:
        with (out / "curves.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cycle", "labeled_size", "validation_accuracy",
                             "test_accuracy", "audit_accuracy"])
            writer.writerows(result.curve_rows)
    print(json.dumps({"report": str(out / "report.json"),
                      "test_accuracy": result.test_accuracy,
                      "degenerate_fsl": result.degenerate_fsl}))
    return 0


def cmd_train(args) -> int:
    return _run_training_command(args, "fsl")


def cmd_ssl(args) -> int:
    return _run_training_command(args, "ssl")


def cmd_matrix(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    summary = run_matrix(cfg, out)
    report = {"command": "matrix", "config": cfg.to_dict(), **summary}
    _write_report(out / "matrix_report.json", report)
    print(json.dumps(summary))
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    rows = run_ablation(cfg, out)
    report = {"command": "ablate", "config": cfg.to_dict(), "rows": rows}
    _write_report(out / "ablation_report.json", report)
    print(json.dumps({"rows": len(rows), "table": str(out / "ablation.csv")}))
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    path = cfg.get("data", "path")
    if not path:
        raise ConfigError("no dataset given: set data.path (or --set data.path=FILE)")
    dataset = load_dataset(path)
    samples, class_names = dataset.samples, dataset.class_names
    if cfg.get("split", "classes"):
        samples, class_names = subset_classes(samples, class_names,
                                              cfg.get("split", "classes"))
    model = SignClassifier.load(args.checkpoint,
                                expected_config=cfg.model_config(len(class_names)))
    seed = cfg.get("split", "seed")
    train, val, test = split_train_val_test(samples, seed=seed,
                                            class_names=class_names)
    chosen = {"train": train, "val": val, "test": test}[args.split]
    result = evaluate(model, chosen, cfg.normalization_config())
    payload = {
        "checkpoint": args.checkpoint,
        "dataset_hash": dataset_content_hash(path),
        "split": args.split,
        "accuracy": result.accuracy,
        "size": result.size,
    }
    print(json.dumps(payload))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "train": cmd_train,
    "ssl": cmd_ssl,
    "matrix": cmd_matrix,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
}


def _configure_logging() -> None:
    level_name = os.environ.get("SSLR_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _fail(exit_code: int, message: str) -> int:
    print(json.dumps({"status": "error", "exit_code": exit_code,
                      "message": message}), file=sys.stderr)
    return exit_code


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliUsageError as exc:
        return _fail(2, str(exc))
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CliUsageError) as exc:
        return _fail(2, str(exc))
    except FileNotFoundError as exc:
        return _fail(2, f"file not found: {exc.filename or exc}")
    except Exception as exc:  # runtime failure contract: exit 1, one line
        log.debug("runtime failure", exc_info=True)
        return _fail(1, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
