"""Iterative pseudo-label self-training.

The loop: train on the labeled pool L, predict the unlabeled pool U, pick
the most confident prediction per class, move those samples (with their
predicted labels) from U into L, retrain, and repeat until U is empty or
the cycle/stall limits trip. Pseudo-labels are never revised once
assigned, |L| strictly grows while |U| strictly shrinks, and the loop
finishes in at most |U_initial| cycles no matter what the model does.

Selection rule (``per_class``): every (sample, class, confidence) triple
is a candidate; process them in descending confidence, consuming each
sample at most once and each class at most once. Ties break to the lower
class index, then the lexicographically smaller sample id. A class whose
candidate samples are all consumed selects nothing that cycle; the batch
is nonempty whenever U is. ``global_max`` instead takes the single most
confident prediction per cycle.

True labels of U exist only in an evaluation-side audit registry used to
report pseudo-label quality; selection and training never see them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from sslr.data import SignSample
from sslr.model import SignClassifier
from sslr.preprocess import NormalizationConfig, derive_rng
from sslr.training import Evaluation, TrainConfig, TrainReport, evaluate, fit, preprocess_for_model

log = logging.getLogger("sslr.pseudolabel")

SELECTION_MODES = ("per_class", "global_max")


@dataclass(frozen=True)
class SslConfig:
    """Loop settings; the stop rule is U-empty OR max_cycles OR a validation
    stall of ``stall_cycles`` cycles (None disables stalling)."""

    train: TrainConfig = field(default_factory=TrainConfig)
    inner_epochs: int = 60  # retraining budget per cycle
    max_cycles: int = 1000
    stall_cycles: int | None = None
    warm_start: bool = True  # retrain from current parameters, not a re-init
    selection: str = "per_class"
    seed: int = 0

    def __post_init__(self):
        if self.max_cycles < 1:
            raise ValueError(f"max_cycles must be >= 1, got {self.max_cycles}")
        if self.inner_epochs < 1:
            raise ValueError(f"inner_epochs must be >= 1, got {self.inner_epochs}")
        if self.stall_cycles is not None and self.stall_cycles < 1:
            raise ValueError("stall_cycles must be >= 1 or None")
        if self.selection not in SELECTION_MODES:
            raise ValueError(f"selection must be one of {SELECTION_MODES}")


@dataclass(frozen=True)
class PseudoLabelSelection:
    sample_id: str
    label: int
    confidence: float


@dataclass
class PseudoLabelBatch:
    """Selections of one cycle; ids unique, classes unique, confidences in (0, 1]."""

    selections: list[PseudoLabelSelection]
    cycle_index: int

    def __post_init__(self):
        ids = [s.sample_id for s in self.selections]
        if len(ids) != len(set(ids)):
            raise ValueError("a sample id appears more than once in a batch")
        labels = [s.label for s in self.selections]
        if len(labels) != len(set(labels)):
            raise ValueError("a class appears more than once in a batch")
        if any(not 0.0 < s.confidence <= 1.0 for s in self.selections):
            raise ValueError("confidences must lie in (0, 1]")

    def __len__(self) -> int:
        return len(self.selections)

    def to_dict(self) -> dict:
        return {
            "cycle_index": self.cycle_index,
            "selections": [
                {"sample_id": s.sample_id, "label": s.label, "confidence": s.confidence}
                for s in self.selections
            ],
        }


def select_from_probabilities(
    probabilities: np.ndarray,
    sample_ids: Sequence[str],
    mode: str = "per_class",
) -> list[PseudoLabelSelection]:
    """Apply the selection rule to an (S, C) class-probability matrix."""
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != len(sample_ids):
        raise ValueError(
            f"probability matrix {probs.shape} does not match {len(sample_ids)} sample ids"
        )
    if probs.shape[0] == 0:
        raise ValueError("cannot select from an empty unlabeled pool")
    if mode not in SELECTION_MODES:
        raise ValueError(f"selection must be one of {SELECTION_MODES}")
    num_samples, num_classes = probs.shape

    candidates = sorted(
        (
            (-probs[i, c], c, sample_ids[i], i)
            for i in range(num_samples)
            for c in range(num_classes)
        ),
    )
    selections: list[PseudoLabelSelection] = []
    used_samples: set[int] = set()
    used_classes: set[int] = set()
    for neg_conf, c, sid, i in candidates:
        if i in used_samples or c in used_classes:
            continue
        selections.append(PseudoLabelSelection(sample_id=sid, label=c,
                                               confidence=-neg_conf))
        if mode == "global_max":
            return selections
        used_samples.add(i)
        used_classes.add(c)
        if len(used_classes) == num_classes or len(used_samples) == num_samples:
            break
    return selections


def select_pseudo_labels(
    model: SignClassifier,
    unlabeled: Sequence[SignSample],
    cycle_index: int = 0,
    mode: str = "per_class",
) -> PseudoLabelBatch:
    """Score every unlabeled sample and pick this cycle's pseudo-labels.

    Samples are expected preprocessed (normalized) already. Raises on an
    empty pool.
    """
    if not unlabeled:
        raise ValueError("cannot select pseudo-labels from an empty unlabeled pool")
    probs = np.stack([model.forward(s) for s in unlabeled])
    ids = [s.id for s in unlabeled]
    selections = select_from_probabilities(probs, ids, mode=mode)
    return PseudoLabelBatch(selections=selections, cycle_index=cycle_index)


@dataclass
class CycleRecord:
    cycle: int
    labeled_size: int
    unlabeled_size: int
    validation_accuracy: float | None
    test_accuracy: float | None
    batch: PseudoLabelBatch
    audit_accuracy: float | None

    def to_dict(self) -> dict:
        return {
            "cycle": self.cycle,
            "labeled_size": self.labeled_size,
            "unlabeled_size": self.unlabeled_size,
            "validation_accuracy": self.validation_accuracy,
            "test_accuracy": self.test_accuracy,
            "audit_accuracy": self.audit_accuracy,
            "batch": self.batch.to_dict(),
        }


@dataclass
class SslReport:
    """Loop history plus initial/final metrics; serializes to JSON and CSV."""

    initial_report: TrainReport
    initial_labeled_size: int
    initial_unlabeled_size: int
    initial_validation: float | None
    initial_test: float | None
    cycles: list[CycleRecord]
    final_test: Evaluation | None
    degenerate_fsl: bool = False
    stop_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "initial": self.initial_report.to_dict(),
            "initial_labeled_size": self.initial_labeled_size,
            "initial_unlabeled_size": self.initial_unlabeled_size,
            "initial_validation": self.initial_validation,
            "initial_test": self.initial_test,
            "cycles": [c.to_dict() for c in self.cycles],
            "final_test": None if self.final_test is None else self.final_test.to_dict(),
            "degenerate_fsl": self.degenerate_fsl,
            "stop_reason": self.stop_reason,
        }

    def curve_rows(self) -> list[tuple]:
        """(cycle, labeled_size, val_acc, test_acc, audit_acc) rows, cycle 0 first."""
        rows = [(0, self.initial_labeled_size, self.initial_validation,
                 self.initial_test, None)]
        for c in self.cycles:
            rows.append((c.cycle, c.labeled_size, c.validation_accuracy,
                         c.test_accuracy, c.audit_accuracy))
        return rows


def run_fsl_baseline(
    model: SignClassifier,
    labeled: Sequence[SignSample],
    val: Sequence[SignSample] | None,
    test: Sequence[SignSample] | None,
    cfg: TrainConfig,
) -> tuple[TrainReport, Evaluation | None]:
    """Plain supervised training on L; the comparison point for the loop."""
    report = fit(model, labeled, val, cfg)
    test_eval = evaluate(model, test, cfg.normalization) if test else None
    return report, test_eval


def run_ssl(
    model: SignClassifier,
    labeled: Sequence[SignSample],
    unlabeled: Sequence[SignSample],
    val: Sequence[SignSample] | None,
    test: Sequence[SignSample] | None,
    cfg: SslConfig,
    audit_labels: dict[str, int] | None = None,
) -> SslReport:
    """Execute the full self-training loop; deterministic in the seeds.

    ``audit_labels`` maps unlabeled sample ids to their hidden true labels
    and is consulted only while building the report, never for selection
    or training.
    """
    if not labeled:
        raise ValueError("labeled pool must be nonempty")
    overlap = {s.id for s in labeled} & {s.id for s in unlabeled}
    if overlap:
        raise ValueError(f"labeled and unlabeled pools overlap: {sorted(overlap)[:3]}")
    if any(s.label is not None for s in unlabeled):
        raise ValueError("unlabeled samples must not carry labels")

    norm = cfg.train.normalization
    pool_l = preprocess_for_model(labeled, norm)
    pool_u = preprocess_for_model(unlabeled, norm)
    val_n = preprocess_for_model(val, norm) if val else None
    test_n = preprocess_for_model(test, norm) if test else None
    # Pools are preprocessed once up front; inner fits must not re-normalize.
    inner_base = replace(cfg.train, normalization=NormalizationConfig(
        enabled=False, layout=norm.layout))

    initial_report = fit(model, pool_l, val_n, inner_base)
    initial_val = evaluate(model, val_n).accuracy if val_n else None
    initial_test = evaluate(model, test_n).accuracy if test_n else None

    report = SslReport(
        initial_report=initial_report,
        initial_labeled_size=len(pool_l),
        initial_unlabeled_size=len(pool_u),
        initial_validation=initial_val,
        initial_test=initial_test,
        cycles=[],
        final_test=None,
        degenerate_fsl=not pool_u,
    )
    if not pool_u:
        report.final_test = evaluate(model, test_n) if test_n else None
        report.stop_reason = "unlabeled pool empty at start"
        return report

    pool_size = len(pool_l) + len(pool_u)
    u_initial = len(pool_u)
    best_val = initial_val
    best_val_cycle = 0
    cycle = 0
    stop_reason = "unlabeled pool exhausted"
    while pool_u:
        if cycle >= cfg.max_cycles:
            stop_reason = f"max_cycles={cfg.max_cycles} reached"
            break
        cycle += 1
        if cycle > u_initial:
            raise AssertionError("loop exceeded the |U_initial| termination bound")

        batch = select_pseudo_labels(model, pool_u, cycle_index=cycle,
                                     mode=cfg.selection)
        if not 1 <= len(batch) <= min(model.config.num_classes, len(pool_u)):
            raise AssertionError(f"cycle {cycle}: batch size {len(batch)} out of range")

        by_id = {s.id: s for s in pool_u}
        assigned = {sel.sample_id: sel.label for sel in batch.selections}
        pool_l = pool_l + [by_id[sid].with_label(label) for sid, label in assigned.items()]
        before_u = len(pool_u)
        pool_u = [s for s in pool_u if s.id not in assigned]

        if len(pool_u) >= before_u or len(pool_l) + len(pool_u) != pool_size:
            raise AssertionError(f"cycle {cycle}: set algebra violated")
        if {s.id for s in pool_l} & {s.id for s in pool_u}:
            raise AssertionError(f"cycle {cycle}: L and U overlap")

        if not cfg.warm_start:
            model.load_state_arrays(SignClassifier(model.config, seed=cfg.seed).state_arrays())
        cycle_seed = int(derive_rng(cfg.seed, "cycle", cycle).integers(2**31))
        fit(model, pool_l, val_n,
            replace(inner_base, epochs=cfg.inner_epochs, seed=cycle_seed))

        val_acc = evaluate(model, val_n).accuracy if val_n else None
        test_acc = evaluate(model, test_n).accuracy if test_n else None
        audit = None
        if audit_labels:
            matches = [audit_labels.get(s.sample_id) == s.label for s in batch.selections
                       if s.sample_id in audit_labels]
            audit = float(np.mean(matches)) if matches else None
        report.cycles.append(CycleRecord(
            cycle=cycle, labeled_size=len(pool_l), unlabeled_size=len(pool_u),
            validation_accuracy=val_acc, test_accuracy=test_acc,
            batch=batch, audit_accuracy=audit,
        ))
        log.debug("cycle %d: |L|=%d |U|=%d val=%s", cycle, len(pool_l), len(pool_u), val_acc)

        if val_acc is not None and cfg.stall_cycles is not None:
            if best_val is None or val_acc > best_val:
                best_val = val_acc
                best_val_cycle = cycle
            elif cycle - best_val_cycle >= cfg.stall_cycles:
                stop_reason = f"validation stalled for {cfg.stall_cycles} cycles"
                break

    report.final_test = evaluate(model, test_n) if test_n else None
    report.stop_reason = stop_reason
    return report
