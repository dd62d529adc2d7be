"""Signing-space normalization and training-time pose augmentation.

Normalization projects each sequence into a head-anchored coordinate
frame: body joints land in a square centered on the head midpoint whose
side is a configurable multiple of the head height, then scaled to
[0, 1]^2; each hand is independently rescaled through its own per-sample
bounding box. The projection is invariant to translating and uniformly
scaling the raw coordinates, which is the whole point: camera distance
and framing must not leak into the model.

Augmentations (training data only) are applied in a fixed order: Gaussian
jitter on the coordinates, a rigid in-plane rotation of up to 13 degrees,
a small rotation of each arm chain about its shoulder, and a projective
"squeeze" of the frame of up to 15% per side. Rotation and squeeze draw
one set of random values per sample so a sign's motion stays coherent
over time; noise is drawn per coordinate. Missing joints are (NaN, NaN)
sentinels and pass through every transform untouched.

All operations are pure: they return new samples and never mutate their
input. With a fixed seed the full pipeline is a pure function of
(sample, config, seed).
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from sslr.data import JointLayout, SignSample

log = logging.getLogger("sslr.preprocess")

DEFAULT_MAX_ROTATION_DEG = 13.0
DEFAULT_ARM_ROTATION_DEG = 4.0
DEFAULT_MAX_SHEAR_FRACTION = 0.15


class NormalizationError(ValueError):
    """Head geometry unusable; message names the offending sample id."""


@dataclass(frozen=True)
class NormalizationConfig:
    """Signing-space projection settings.

    ``signing_space_scale`` is the body-box side length in head heights.
    """

    enabled: bool = True
    signing_space_scale: float = 3.0
    layout: JointLayout = field(default_factory=JointLayout)

    def __post_init__(self):
        if self.signing_space_scale <= 0:
            raise ValueError(f"signing_space_scale must be > 0, got {self.signing_space_scale}")


@dataclass(frozen=True)
class AugmentationConfig:
    """Toggles and magnitudes for the four augmentations, plus the base seed."""

    enable_noise: bool = True
    noise_sigma: float = 0.001
    enable_rotation: bool = True
    max_rotation_deg: float = DEFAULT_MAX_ROTATION_DEG
    enable_arm_rotation: bool = True
    arm_rotation_deg: float = DEFAULT_ARM_ROTATION_DEG
    enable_shear: bool = True
    max_shear_fraction: float = DEFAULT_MAX_SHEAR_FRACTION
    seed: int = 0
    layout: JointLayout = field(default_factory=JointLayout)

    def __post_init__(self):
        for name in ("noise_sigma", "max_rotation_deg", "arm_rotation_deg",
                     "max_shear_fraction"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.max_shear_fraction >= 0.5:
            raise ValueError(
                f"max_shear_fraction must be < 0.5, got {self.max_shear_fraction}"
            )

    @classmethod
    def disabled(cls, seed: int = 0) -> "AugmentationConfig":
        return cls(enable_noise=False, enable_rotation=False,
                   enable_arm_rotation=False, enable_shear=False, seed=seed)


def derive_rng(base_seed: int, *tokens) -> np.random.Generator:
    """Independent generator for (seed, sample id, epoch, ...) tuples.

    Hash-derived so per-sample augmentation is order-independent and safe
    to parallelize.
    """
    h = hashlib.sha256(repr((int(base_seed),) + tuple(tokens)).encode("utf-8"))
    return np.random.default_rng(int.from_bytes(h.digest()[:8], "little"))


def _head_geometry(frames: np.ndarray, layout: JointLayout, sample_id: str):
    """Per-sample head height and head midpoint (medians over frames)."""
    head = frames[:, list(layout.head), :]  # (T, H, 2)
    present = ~np.isnan(head[..., 0])
    extents = []
    centers = []
    for t in range(head.shape[0]):
        pts = head[t][present[t]]
        if len(pts) >= 1:
            centers.append(pts.mean(axis=0))
        if len(pts) >= 2:
            extent = float(pts[:, 1].max() - pts[:, 1].min())
            if extent > 0.0:
                extents.append(extent)
    if not extents or not centers:
        raise NormalizationError(
            f"sample {sample_id!r}: head height not computable in any frame"
        )
    height = float(np.median(extents))
    if height <= 0.0:
        raise NormalizationError(f"sample {sample_id!r}: head height is not positive")
    center = np.median(np.stack(centers), axis=0)
    return height, center


def normalize_sample(sample: SignSample, cfg: NormalizationConfig) -> SignSample:
    """Project one sequence into signing-space coordinates.

    Body joints: (p - corner) / side with side = scale * head height and
    the square centered on the head midpoint. Hands: per-axis rescale of
    each hand's own per-sample bounding box onto [0, 1]; a degenerate axis
    collapses to 0.5. Missing joints come out as (0, 0).
    """
    if not cfg.enabled:
        return sample
    layout = cfg.layout
    frames = sample.frames
    height, center = _head_geometry(frames, layout, sample.id)
    side = cfg.signing_space_scale * height
    origin = center - side / 2.0

    out = np.empty_like(frames)
    body = list(layout.body)
    out[:, body, :] = (frames[:, body, :] - origin) / side

    for hand in (layout.left_hand, layout.right_hand):
        idx = list(hand)
        pts = frames[:, idx, :]
        present = ~np.isnan(pts[..., 0])
        if not present.any():
            out[:, idx, :] = pts
            continue
        flat = pts[present]  # (N, 2) present points across all frames
        lo = flat.min(axis=0)
        size = flat.max(axis=0) - lo
        scaled = np.empty_like(pts)
        for axis in range(2):
            if size[axis] > 0.0:
                scaled[..., axis] = (pts[..., axis] - lo[axis]) / size[axis]
            else:
                scaled[..., axis] = np.where(np.isnan(pts[..., axis]), np.nan, 0.5)
        out[:, idx, :] = scaled

    out = np.where(np.isnan(out), 0.0, out)
    return sample.with_frames(out)


def replace_missing(sample: SignSample) -> SignSample:
    """Substitute (0, 0) for missing-joint sentinels without normalizing.

    Used when normalization is disabled so raw sequences can still feed
    the model, which accepts (0, 0) as the undetected-keypoint value.
    """
    if not np.isnan(sample.frames).any():
        return sample
    return sample.with_frames(np.where(np.isnan(sample.frames), 0.0, sample.frames))


def add_gaussian_noise(sample: SignSample, sigma: float, rng: np.random.Generator) -> SignSample:
    """Perturb every present coordinate by i.i.d. N(0, sigma^2)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return sample
    noise = rng.normal(scale=sigma, size=sample.frames.shape)
    return sample.with_frames(sample.frames + noise)  # NaN sentinels absorb the noise


def _frame_pivots(frames: np.ndarray, layout: JointLayout) -> np.ndarray:
    """Per-frame mid-shoulder pivot; falls back to the present-joint centroid."""
    T = frames.shape[0]
    pivots = np.empty((T, 2))
    ls, rs = layout.left_shoulder, layout.right_shoulder
    for t in range(T):
        left, right = frames[t, ls], frames[t, rs]
        if not (np.isnan(left[0]) or np.isnan(right[0])):
            pivots[t] = (left + right) / 2.0
        else:
            present = frames[t][~np.isnan(frames[t, :, 0])]
            pivots[t] = present.mean(axis=0) if len(present) else (0.0, 0.0)
    return pivots


def _rotate_about(points: np.ndarray, pivot: np.ndarray, angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    rel = points - pivot
    rotated = np.empty_like(rel)
    rotated[..., 0] = c * rel[..., 0] - s * rel[..., 1]
    rotated[..., 1] = s * rel[..., 0] + c * rel[..., 1]
    return rotated + pivot


def rotate_in_plane(
    sample: SignSample,
    max_angle_deg: float,
    rng: np.random.Generator,
    layout: JointLayout | None = None,
) -> SignSample:
    """Rigid rotation of every joint in every frame about the mid-shoulder point.

    One angle is drawn uniformly from [-max, +max] per sample and applied
    to all frames, so the motion is transformed coherently in time.
    """
    layout = layout or JointLayout()
    angle = math.radians(rng.uniform(-max_angle_deg, max_angle_deg))
    if angle == 0.0:
        return sample
    frames = sample.frames
    pivots = _frame_pivots(frames, layout)
    out = np.empty_like(frames)
    for t in range(frames.shape[0]):
        out[t] = _rotate_about(frames[t], pivots[t], angle)
    return sample.with_frames(out)


def rotate_arm(
    sample: SignSample,
    max_angle_deg: float,
    rng: np.random.Generator,
    side: str,
    layout: JointLayout | None = None,
) -> SignSample:
    """Rotate one arm's elbow-wrist-hand chain about that arm's shoulder.

    The angle is drawn from [-max, +max] once per sample. Frames whose
    shoulder joint is missing are skipped and logged.
    """
    layout = layout or JointLayout()
    if side == "left":
        shoulder, chain = layout.left_shoulder, list(layout.left_arm)
    elif side == "right":
        shoulder, chain = layout.right_shoulder, list(layout.right_arm)
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    angle = math.radians(rng.uniform(-max_angle_deg, max_angle_deg))
    if angle == 0.0:
        return sample
    frames = sample.frames.copy()
    skipped = 0
    for t in range(frames.shape[0]):
        pivot = frames[t, shoulder]
        if np.isnan(pivot[0]):
            skipped += 1
            continue
        frames[t, chain] = _rotate_about(frames[t, chain], pivot, angle)
    if skipped:
        log.debug("rotate_arm(%s): skipped %d frame(s) with a missing shoulder on sample %s",
                  side, skipped, sample.id)
    return sample.with_frames(frames)


def homography_from_unit_square(corners: np.ndarray) -> np.ndarray:
    """3x3 projective map sending (0,0),(1,0),(0,1),(1,1) to the given corners.

    Solves the standard 8-unknown linear system with h22 fixed to 1.
    """
    src = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)])
    dst = np.asarray(corners, dtype=np.float64)
    if dst.shape != (4, 2):
        raise ValueError(f"expected four corner points, got shape {dst.shape}")
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = (x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y)
        a[2 * i + 1] = (0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y)
        b[2 * i] = u
        b[2 * i + 1] = v
    h = np.linalg.solve(a, b)
    return np.array([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])


def apply_homography(points: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Apply a 3x3 projective map to (..., 2) points (NaN passes through)."""
    x, y = points[..., 0], points[..., 1]
    w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    u = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w
    v = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w
    return np.stack([u, v], axis=-1)


def squeeze_homography(insets: np.ndarray, axis: int) -> np.ndarray:
    """Unit-square squeeze along one axis as a 4-corner projective map.

    For ``axis == 0`` (horizontal), ``insets`` is (left_top, right_top,
    left_bottom, right_bottom): the top edge is pushed in from the left by
    left_top and from the right by right_top, similarly for the bottom
    edge. ``axis == 1`` squeezes vertically with per-side top/bottom
    insets in the same corner order.
    """
    lt, rt, lb, rb = (float(v) for v in insets)
    if axis == 0:
        corners = [(lt, 0.0), (1.0 - rt, 0.0), (lb, 1.0), (1.0 - rb, 1.0)]
    elif axis == 1:
        corners = [(0.0, lt), (1.0, rt), (0.0, 1.0 - lb), (1.0, 1.0 - rb)]
    else:
        raise ValueError(f"axis must be 0 or 1, got {axis}")
    return homography_from_unit_square(np.array(corners))


def shear_squeeze(
    sample: SignSample,
    max_fraction: float,
    rng: np.random.Generator,
) -> SignSample:
    """Squeeze the frame from the left/right and top/bottom by random insets.

    Eight insets are drawn independently from [0, max_fraction]: four for
    the horizontal squeeze (top/bottom ends of the left and right edges)
    and four for the vertical one. Unequal insets shear, equal insets
    squeeze; the combined projective map keeps the unit square inside
    itself and preserves straight lines. Expects coordinates already in
    [0, 1] (post-normalization). One draw per sample.
    """
    horizontal = rng.uniform(0.0, max_fraction, size=4)
    vertical = rng.uniform(0.0, max_fraction, size=4)
    h = squeeze_homography(vertical, axis=1) @ squeeze_homography(horizontal, axis=0)
    return sample.with_frames(apply_homography(sample.frames, h))


def augment(
    sample: SignSample,
    cfg: AugmentationConfig,
    rng: np.random.Generator,
) -> SignSample:
    """Apply the enabled augmentations in their fixed order.

    Order: noise, in-plane rotation, arm rotation, shear. Disabled steps
    are identities and consume no random draws. Each arm is independently
    eligible with probability 1/2 per call.
    """
    out = sample
    if cfg.enable_noise:
        out = add_gaussian_noise(out, cfg.noise_sigma, rng)
    if cfg.enable_rotation:
        out = rotate_in_plane(out, cfg.max_rotation_deg, rng, cfg.layout)
    if cfg.enable_arm_rotation:
        for side in ("left", "right"):
            if rng.uniform() < 0.5:
                out = rotate_arm(out, cfg.arm_rotation_deg, rng, side, cfg.layout)
    if cfg.enable_shear:
        out = shear_squeeze(out, cfg.max_shear_fraction, rng)
    return out


def augment_for_epoch(
    sample: SignSample,
    cfg: AugmentationConfig,
    train_seed: int,
    epoch: int,
) -> SignSample:
    """Deterministic per-sample, per-epoch augmentation used by the trainer."""
    rng = derive_rng(cfg.seed, train_seed, epoch, sample.id)
    return augment(sample, cfg, rng)
