"""Pose-sequence data model, file I/O, dataset splitting, and a synthetic generator.

A pose frame is a (54, 2) float64 array of (x, y) joint coordinates; a
missing joint is the sentinel pair (NaN, NaN) and no other NaN is legal.
A sample is an ordered stack of frames with an optional class label.

The on-disk format is JSON lines (UTF-8, one sample per line) with a
header line declaring class ordering and coordinate convention:

    {"classes": ["book", "drink", ...], "coord_space": "pixel"}
    {"id": "s0", "label": "book", "signer": "a", "frames": [[x0, y0, ..., x53, y53], ...]}

Each frame array holds exactly 108 numbers; a missing joint is encoded as
a null pair. Labels are class-name strings resolved against the header.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

NUM_JOINTS = 54
FRAME_DIM = 2 * NUM_JOINTS

# Default joint-role layout, indices into the 54-joint frame:
#   0-7   body: nose, neck, left/right shoulder, left/right elbow, left/right wrist
#   8-11  head landmarks: left/right ear, left/right eye
#   12-32 left hand: wrist plus 20 hand landmarks
#   33-53 right hand: wrist plus 20 hand landmarks
# Any other 54-joint layout works as long as a JointLayout names the roles.
NOSE, NECK = 0, 1
LEFT_SHOULDER, RIGHT_SHOULDER = 2, 3
LEFT_ELBOW, RIGHT_ELBOW = 4, 5
LEFT_WRIST, RIGHT_WRIST = 6, 7


class DatasetFormatError(ValueError):
    """A pose file violates the JSON-lines contract; message names the line."""


@dataclass(frozen=True)
class JointLayout:
    """Names which joint indices play which anatomical role.

    ``head`` drives head-height estimation, the shoulder/arm indices drive
    the rigid augmentations, and the hand index sets get their own
    bounding-box normalization.
    """

    head: tuple[int, ...] = (NOSE, 8, 9, 10, 11)
    left_shoulder: int = LEFT_SHOULDER
    right_shoulder: int = RIGHT_SHOULDER
    left_arm: tuple[int, ...] = (LEFT_ELBOW, LEFT_WRIST) + tuple(range(12, 33))
    right_arm: tuple[int, ...] = (RIGHT_ELBOW, RIGHT_WRIST) + tuple(range(33, 54))
    left_hand: tuple[int, ...] = tuple(range(12, 33))
    right_hand: tuple[int, ...] = tuple(range(33, 54))

    def __post_init__(self):
        for name in ("head", "left_arm", "right_arm", "left_hand", "right_hand"):
            indices = getattr(self, name)
            if not indices or min(indices) < 0 or max(indices) >= NUM_JOINTS:
                raise ValueError(f"joint layout field {name!r} has out-of-range indices")

    @property
    def body(self) -> tuple[int, ...]:
        """Everything that is not a hand: normalized via the signing space."""
        hands = set(self.left_hand) | set(self.right_hand)
        return tuple(i for i in range(NUM_JOINTS) if i not in hands)


@dataclass(frozen=True)
class SignSample:
    """One pose sequence; ``label`` is a class index or None for unlabeled."""

    id: str
    frames: np.ndarray  # (T, 54, 2) float64, missing joints as (NaN, NaN)
    label: int | None = None
    signer_id: str | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[1:] != (NUM_JOINTS, 2):
            raise ValueError(
                f"sample {self.id!r}: frames must have shape (T, {NUM_JOINTS}, 2),"
                f" got {frames.shape}"
            )
        if frames.shape[0] < 1:
            raise ValueError(f"sample {self.id!r}: needs at least one frame")
        # NaN is only legal as a full (NaN, NaN) sentinel pair.
        nan = np.isnan(frames)
        if (nan[..., 0] != nan[..., 1]).any():
            raise ValueError(f"sample {self.id!r}: half-missing joint (single NaN)")
        if np.isinf(frames).any():
            raise ValueError(f"sample {self.id!r}: non-finite coordinate")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    def with_frames(self, frames: np.ndarray) -> "SignSample":
        return replace(self, frames=frames)

    def with_label(self, label: int | None) -> "SignSample":
        return replace(self, label=label)

    def missing_mask(self) -> np.ndarray:
        """(T, 54) bool mask of missing joints."""
        return np.isnan(self.frames[..., 0])


@dataclass
class PoseDataset:
    """Samples plus the class ordering and coordinate convention they share."""

    samples: list[SignSample]
    class_names: list[str]
    coord_space: str = "unit"

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass
class DatasetSplit:
    """Labeled pool L, unlabeled pool U, validation, and test sets.

    Unlabeled samples carry ``label=None``; their true labels live only in
    ``audit_labels``, an evaluation-only registry keyed by sample id that
    training and selection code must never consult.
    """

    labeled: list[SignSample]
    unlabeled: list[SignSample]
    validation: list[SignSample]
    test: list[SignSample]
    class_names: list[str]
    audit_labels: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.id for s in self.labeled + self.unlabeled + self.validation + self.test]
        if len(ids) != len(set(ids)):
            raise ValueError("split sets must be disjoint by sample id")
        if any(s.label is not None for s in self.unlabeled):
            raise ValueError("unlabeled samples must not expose a label")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def _parse_frames(raw_frames, line_no: int, sample_id: str) -> np.ndarray:
    if not isinstance(raw_frames, list) or not raw_frames:
        raise DatasetFormatError(f"line {line_no}: sample {sample_id!r} has no frames")
    out = np.empty((len(raw_frames), NUM_JOINTS, 2), dtype=np.float64)
    for t, frame in enumerate(raw_frames):
        if not isinstance(frame, list) or len(frame) != FRAME_DIM:
            count = len(frame) // 2 if isinstance(frame, list) else "?"
            raise DatasetFormatError(
                f"line {line_no}: frame {t} has {count} joints, expected {NUM_JOINTS}"
            )
        for j in range(NUM_JOINTS):
            x, y = frame[2 * j], frame[2 * j + 1]
            if x is None or y is None:
                if x is not None or y is not None:
                    raise DatasetFormatError(
                        f"line {line_no}: frame {t} joint {j} is half-missing"
                    )
                out[t, j] = (np.nan, np.nan)
                continue
            if not isinstance(x, (int, float)) or not isinstance(y, (int, float)):
                raise DatasetFormatError(
                    f"line {line_no}: frame {t} joint {j} has a non-numeric coordinate"
                )
            if not (math.isfinite(x) and math.isfinite(y)):
                raise DatasetFormatError(
                    f"line {line_no}: frame {t} joint {j} has a non-finite coordinate"
                )
            out[t, j] = (x, y)
    return out


def load_dataset(path: str | Path) -> PoseDataset:
    """Parse a pose file; aborts with the first malformed line number."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty file, expected a header line")

    def reject_constant(token):
        raise DatasetFormatError(f"non-finite JSON constant {token!r} is not allowed")

    try:
        header = json.loads(lines[0], parse_constant=reject_constant)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line 1: invalid JSON header: {exc}") from None
    if not isinstance(header, dict) or "classes" not in header:
        raise DatasetFormatError('line 1: header must be an object with a "classes" list')
    unknown = set(header) - {"classes", "coord_space"}
    if unknown:
        raise DatasetFormatError(f"line 1: unknown header keys {sorted(unknown)}")
    class_names = header["classes"]
    if not isinstance(class_names, list) or not all(isinstance(c, str) for c in class_names):
        raise DatasetFormatError('line 1: "classes" must be a list of strings')
    if len(set(class_names)) != len(class_names):
        raise DatasetFormatError("line 1: duplicate class names")
    coord_space = header.get("coord_space", "unit")
    if coord_space not in ("pixel", "unit"):
        raise DatasetFormatError(f'line 1: coord_space must be "pixel" or "unit", got {coord_space!r}')
    class_index = {name: i for i, name in enumerate(class_names)}

    samples: list[SignSample] = []
    seen_ids: set[str] = set()
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line, parse_constant=reject_constant)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {line_no}: invalid JSON: {exc}") from None
        if not isinstance(record, dict):
            raise DatasetFormatError(f"line {line_no}: record must be a JSON object")
        unknown = set(record) - {"id", "label", "signer", "frames"}
        if unknown:
            raise DatasetFormatError(f"line {line_no}: unknown record keys {sorted(unknown)}")
        sample_id = record.get("id")
        if not isinstance(sample_id, str) or not sample_id:
            raise DatasetFormatError(f"line {line_no}: missing or invalid sample id")
        if sample_id in seen_ids:
            raise DatasetFormatError(f"line {line_no}: duplicate sample id {sample_id!r}")
        seen_ids.add(sample_id)
        raw_label = record.get("label")
        if raw_label is None:
            label = None
        else:
            if raw_label not in class_index:
                raise DatasetFormatError(
                    f"line {line_no}: label {raw_label!r} not in the header class list"
                )
            label = class_index[raw_label]
        frames = _parse_frames(record.get("frames"), line_no, sample_id)
        samples.append(
            SignSample(id=sample_id, frames=frames, label=label,
                       signer_id=record.get("signer"))
        )
    return PoseDataset(samples=samples, class_names=list(class_names), coord_space=coord_space)


def save_dataset(dataset: PoseDataset, path: str | Path) -> None:
    """Write the JSON-lines pose format; inverse of ``load_dataset``."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {"classes": dataset.class_names, "coord_space": dataset.coord_space}
        fh.write(json.dumps(header) + "\n")
        for sample in dataset.samples:
            frames_out = []
            for frame in sample.frames:
                flat: list[float | None] = []
                for x, y in frame:
                    if math.isnan(x):
                        flat.extend((None, None))
                    else:
                        flat.extend((float(x), float(y)))
                frames_out.append(flat)
            record = {
                "id": sample.id,
                "label": None if sample.label is None else dataset.class_names[sample.label],
                "signer": sample.signer_id,
                "frames": frames_out,
            }
            fh.write(json.dumps(record) + "\n")


def _by_class(samples: Sequence[SignSample]) -> dict[int, list[SignSample]]:
    groups: dict[int, list[SignSample]] = {}
    for s in samples:
        if s.label is None:
            raise ValueError(f"sample {s.id!r} has no label; stratified ops need labels")
        groups.setdefault(s.label, []).append(s)
    return groups


def _class_name(label: int, class_names: Sequence[str] | None) -> str:
    if class_names is not None and 0 <= label < len(class_names):
        return repr(class_names[label])
    return str(label)


def split_train_val_test(
    samples: Sequence[SignSample],
    ratio: tuple[int, int, int] = (4, 1, 1),
    seed: int = 0,
    class_names: Sequence[str] | None = None,
) -> tuple[list[SignSample], list[SignSample], list[SignSample]]:
    """Per-class stratified split, as close to ``ratio`` as integer counts allow.

    Counts are apportioned by largest remainder with validation and test
    guaranteed at least one sample per class, so every class appears in
    all three sets. Classes with fewer than 3 samples are refused by name.
    Deterministic in ``seed`` and stable under input reordering.
    """
    if len(ratio) != 3 or any(r <= 0 for r in ratio):
        raise ValueError(f"ratio must be three positive integers, got {ratio}")
    groups = _by_class(samples)
    rng = np.random.default_rng(seed)
    train: list[SignSample] = []
    val: list[SignSample] = []
    test: list[SignSample] = []
    total = sum(ratio)
    for label in sorted(groups):
        group = sorted(groups[label], key=lambda s: s.id)
        n = len(group)
        if n < 3:
            raise ValueError(
                f"class {_class_name(label, class_names)} has only {n} sample(s);"
                " need at least 3 to fill train/val/test"
            )
        exact = [n * r / total for r in ratio]
        counts = [int(e) for e in exact]
        remainders = [e - c for e, c in zip(exact, counts)]
        while sum(counts) < n:
            # Largest remainder first; prefer the earlier set on ties.
            best = max(range(3), key=lambda i: (remainders[i], -i))
            counts[best] += 1
            remainders[best] = -1.0
        # Every set needs at least one sample; borrow from train if needed.
        for i in (1, 2):
            if counts[i] == 0:
                counts[0] -= 1
                counts[i] += 1
        if counts[0] < 1:
            raise ValueError(
                f"class {_class_name(label, class_names)}: cannot populate all three"
                f" sets with {n} samples"
            )
        order = rng.permutation(n)
        shuffled = [group[i] for i in order]
        train.extend(shuffled[: counts[0]])
        val.extend(shuffled[counts[0] : counts[0] + counts[1]])
        test.extend(shuffled[counts[0] + counts[1] :])
    return train, val, test


def mask_labels(
    train_set: Sequence[SignSample],
    labeled_fraction: float,
    seed: int = 0,
) -> tuple[list[SignSample], list[SignSample], dict[str, int]]:
    """Hide labels on a per-class stratified portion of the training pool.

    Keeps ceil(fraction * class_count) labeled samples per class, never
    fewer than one, so every class stays learnable even at tiny fractions.
    Returns (L, U, audit) where U samples have ``label=None`` and ``audit``
    maps their ids to the hidden true labels for evaluation-only use.
    """
    if not 0.0 < labeled_fraction <= 1.0:
        raise ValueError(f"labeled_fraction must be in (0, 1], got {labeled_fraction}")
    groups = _by_class(train_set)
    for label, group in groups.items():
        if not group:
            raise ValueError(f"class {label} is empty")
    rng = np.random.default_rng(seed)
    labeled: list[SignSample] = []
    unlabeled: list[SignSample] = []
    audit: dict[str, int] = {}
    for label in sorted(groups):
        group = sorted(groups[label], key=lambda s: s.id)
        keep = max(1, math.ceil(labeled_fraction * len(group)))
        order = rng.permutation(len(group))
        for rank, idx in enumerate(order):
            sample = group[idx]
            if rank < keep:
                labeled.append(sample)
            else:
                audit[sample.id] = sample.label
                unlabeled.append(sample.with_label(None))
    return labeled, unlabeled, audit


def subset_classes(
    samples: Sequence[SignSample],
    class_names: Sequence[str],
    num_classes: int,
) -> tuple[list[SignSample], list[str]]:
    """Keep the first ``num_classes`` classes in dataset order.

    Labels are already dense indices into ``class_names``, so filtering on
    ``label < num_classes`` preserves a dense 0..num_classes-1 labeling.
    """
    if num_classes > len(class_names):
        raise ValueError(
            f"requested {num_classes} classes but only {len(class_names)} available"
        )
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    kept = [s for s in samples if s.label is not None and s.label < num_classes]
    return kept, list(class_names[:num_classes])


def generate_synthetic(
    num_classes: int,
    samples_per_class: int,
    frames_per_sample: int,
    noise_sigma: float,
    seed: int = 0,
    num_anchors: int = 4,
    class_separation: float = 1.0,
    placement_sigma: float = 0.0,
) -> PoseDataset:
    """Desk-scale synthetic pose dataset with a known class structure.

    Each class is a smooth prototype trajectory: ``num_anchors`` random
    anchor poses interpolated over time. A sample is its class prototype
    plus i.i.d. Gaussian jitter of scale ``noise_sigma``, clipped to keep
    all coordinates inside [0, 1]. Same seed, same dataset.

    Two knobs control difficulty. ``class_separation``: 1.0 draws fully
    independent anchor poses per class, smaller values perturb a shared
    base trajectory by that amount, moving prototypes closer together.
    ``placement_sigma`` translates each whole sample by a random offset,
    simulating camera-framing variation: it degrades raw-coordinate
    nearest-neighbor matching but is exactly removed by signing-space
    normalization.
    """
    if min(num_classes, samples_per_class, frames_per_sample) < 1:
        raise ValueError("all synthetic counts must be >= 1")
    if noise_sigma < 0 or placement_sigma < 0:
        raise ValueError("noise_sigma and placement_sigma must be >= 0")
    if not 0.0 < class_separation <= 1.0:
        raise ValueError("class_separation must be in (0, 1]")
    rng = np.random.default_rng(seed)
    width = len(str(max(num_classes - 1, 1)))
    class_names = [f"class_{c:0{width}d}" for c in range(num_classes)]
    samples: list[SignSample] = []
    t = np.linspace(0.0, 1.0, frames_per_sample)
    base: np.ndarray | None = None
    for c in range(num_classes):
        if class_separation >= 1.0:
            anchors = rng.uniform(0.2, 0.8, size=(num_anchors, NUM_JOINTS, 2))
        else:
            if base is None:
                base = rng.uniform(0.2, 0.8, size=(num_anchors, NUM_JOINTS, 2))
            offsets = rng.uniform(-0.6, 0.6, size=base.shape) * class_separation
            anchors = np.clip(base + offsets, 0.05, 0.95)
        prototype = _interpolate_anchors(anchors, t)
        for k in range(samples_per_class):
            frames = prototype
            if noise_sigma:
                frames = frames + rng.normal(scale=noise_sigma, size=prototype.shape)
            if placement_sigma:
                frames = frames + rng.normal(scale=placement_sigma, size=2)
            frames = np.clip(frames, 0.0, 1.0)
            samples.append(
                SignSample(id=f"c{c:0{width}d}_s{k:04d}", frames=frames, label=c)
            )
    return PoseDataset(samples=samples, class_names=class_names, coord_space="unit")


def _interpolate_anchors(anchors: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Piecewise-cosine interpolation through anchor poses; (T, 54, 2) output."""
    num_anchors = anchors.shape[0]
    if num_anchors == 1:
        return np.repeat(anchors, len(t), axis=0)
    pos = t * (num_anchors - 1)
    idx = np.minimum(pos.astype(int), num_anchors - 2)
    frac = pos - idx
    smooth = (1.0 - np.cos(np.pi * frac)) / 2.0  # ease-in/out between anchors
    left = anchors[idx]
    right = anchors[idx + 1]
    return left + smooth[:, None, None] * (right - left)


def dataset_content_hash(path: str | Path) -> str:
    """Stable provenance hash of a dataset file's bytes."""
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
