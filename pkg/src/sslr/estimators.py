"""Scikit-learn style estimators wrapping the pose-recognition pipeline.

These classes follow the fit/transform/predict and get_params/set_params
conventions so the pipeline composes with the wider ecosystem (clone,
Pipeline, cross-validation loops that accept list-like X). ``X`` is a
sequence of SignSample objects or (T, 54, 2) coordinate arrays; labels
are plain integers. ``PseudoLabelClassifier`` follows the established
semi-supervised convention: ``y == -1`` marks an unlabeled sample.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from sslr.data import SignSample
from sslr.model import ModelConfig, SignClassifier
from sslr.preprocess import (
    AugmentationConfig,
    NormalizationConfig,
    augment,
    derive_rng,
    normalize_sample,
)
from sslr.pseudolabel import SslConfig, run_ssl
from sslr.training import TrainConfig, fit as train_fit


def as_sign_samples(X, ids=None) -> list[SignSample]:
    """Validate and coerce input into SignSample objects."""
    samples = []
    for i, x in enumerate(X):
        if isinstance(x, SignSample):
            samples.append(x)
            continue
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 2 and arr.shape[1] == 108:
            arr = arr.reshape(arr.shape[0], 54, 2)
        if arr.ndim != 3 or arr.shape[1:] != (54, 2):
            raise ValueError(
                f"X[{i}] has shape {np.asarray(x).shape}; expected a SignSample,"
                " a (T, 54, 2) array, or a flat (T, 108) array"
            )
        sample_id = ids[i] if ids is not None else f"x{i:06d}"
        samples.append(SignSample(id=sample_id, frames=arr))
    return samples


def _check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit first"
        )


class PoseNormalizer(TransformerMixin, BaseEstimator):
    """Stateless transformer applying the signing-space projection."""

    def __init__(self, signing_space_scale: float = 3.0):
        self.signing_space_scale = signing_space_scale

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        cfg = NormalizationConfig(signing_space_scale=self.signing_space_scale)
        return [normalize_sample(s, cfg) for s in as_sign_samples(X)]


class PoseAugmenter(TransformerMixin, BaseEstimator):
    """Seeded augmentation transformer; a fixed ``random_state`` makes the
    transform a pure function of its input."""

    def __init__(self, noise_sigma: float = 0.001, max_rotation_deg: float = 13.0,
                 arm_rotation_deg: float = 4.0, max_shear_fraction: float = 0.15,
                 random_state: int = 0):
        self.noise_sigma = noise_sigma
        self.max_rotation_deg = max_rotation_deg
        self.arm_rotation_deg = arm_rotation_deg
        self.max_shear_fraction = max_shear_fraction
        self.random_state = random_state

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        cfg = AugmentationConfig(
            noise_sigma=self.noise_sigma,
            max_rotation_deg=self.max_rotation_deg,
            arm_rotation_deg=self.arm_rotation_deg,
            max_shear_fraction=self.max_shear_fraction,
            seed=self.random_state,
        )
        samples = as_sign_samples(X)
        return [
            augment(s, cfg, derive_rng(cfg.seed, s.id, i))
            for i, s in enumerate(samples)
        ]


class _ConfigMixin:
    """Shared translation from flat estimator params to pipeline configs."""

    def _model_config(self, num_classes: int) -> ModelConfig:
        return ModelConfig(
            num_classes=num_classes,
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            num_encoder_blocks=self.num_encoder_blocks,
            num_decoder_blocks=self.num_decoder_blocks,
            ffn_dim=self.ffn_dim,
            max_sequence_len=self.max_sequence_len,
        )

    def _train_config(self) -> TrainConfig:
        if self.augment:
            augmentation = AugmentationConfig(
                noise_sigma=self.noise_sigma,
                max_rotation_deg=self.max_rotation_deg,
                arm_rotation_deg=self.arm_rotation_deg,
                max_shear_fraction=self.max_shear_fraction,
                seed=self.random_state,
            )
        else:
            augmentation = AugmentationConfig.disabled(seed=self.random_state)
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            seed=self.random_state,
            patience=self.patience,
            augmentation=augmentation,
            normalization=NormalizationConfig(
                enabled=self.normalize,
                signing_space_scale=self.signing_space_scale,
            ),
        )

    def _carve_validation(self, samples, labels):
        """Seeded stratified carve-out for early stopping; never empties a class."""
        if not self.validation_fraction:
            return samples, labels, None
        rng = np.random.default_rng(self.random_state)
        by_class: dict[int, list[int]] = {}
        for i, label in enumerate(labels):
            by_class.setdefault(int(label), []).append(i)
        val_idx: set[int] = set()
        for label in sorted(by_class):
            idx = by_class[label]
            take = int(np.floor(self.validation_fraction * len(idx)))
            take = min(take, len(idx) - 1)  # keep at least one training sample
            if take > 0:
                chosen = rng.permutation(len(idx))[:take]
                val_idx.update(idx[j] for j in chosen)
        train = [(s, y) for i, (s, y) in enumerate(zip(samples, labels)) if i not in val_idx]
        val = [(s, y) for i, (s, y) in enumerate(zip(samples, labels)) if i in val_idx]
        if not val:
            return samples, labels, None
        return [s for s, _ in train], [y for _, y in train], val

    def _label_arrays(self, X, y):
        samples = as_sign_samples(X)
        if y is None:
            y = [s.label for s in samples]
            if any(label is None for label in y):
                raise ValueError("y=None requires every sample to carry a label")
        y = np.asarray(y)
        if len(y) != len(samples):
            raise ValueError(f"X has {len(samples)} samples but y has {len(y)} labels")
        return samples, y


class SignTransformerClassifier(_ConfigMixin, ClassifierMixin, BaseEstimator):
    """Supervised pose-sequence classifier with the full training pipeline.

    ``validation_fraction > 0`` carves a stratified slice out of the
    training data for early stopping / best-epoch restoration.
    """

    def __init__(self, *, hidden_dim: int = 108, num_heads: int = 9,
                 num_encoder_blocks: int = 6, num_decoder_blocks: int = 6,
                 ffn_dim: int | None = None, max_sequence_len: int = 204,
                 epochs: int = 100, learning_rate: float = 1e-3, patience: int = 15,
                 validation_fraction: float = 0.0, normalize: bool = True,
                 signing_space_scale: float = 3.0, augment: bool = True,
                 noise_sigma: float = 0.001, max_rotation_deg: float = 13.0,
                 arm_rotation_deg: float = 4.0, max_shear_fraction: float = 0.15,
                 random_state: int = 0):
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.num_encoder_blocks = num_encoder_blocks
        self.num_decoder_blocks = num_decoder_blocks
        self.ffn_dim = ffn_dim
        self.max_sequence_len = max_sequence_len
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.normalize = normalize
        self.signing_space_scale = signing_space_scale
        self.augment = augment
        self.noise_sigma = noise_sigma
        self.max_rotation_deg = max_rotation_deg
        self.arm_rotation_deg = arm_rotation_deg
        self.max_shear_fraction = max_shear_fraction
        self.random_state = random_state

    def fit(self, X, y=None):
        samples, y = self._label_arrays(X, y)
        self.classes_ = np.unique(y)
        index = {label: i for i, label in enumerate(self.classes_.tolist())}
        labeled = [s.with_label(index[int(label)]) for s, label in zip(samples, y)]
        train_samples, train_labels, val_pairs = self._carve_validation(
            labeled, [s.label for s in labeled])
        train_samples = [s.with_label(l) for s, l in zip(train_samples, train_labels)]
        val_samples = [s.with_label(l) for s, l in val_pairs] if val_pairs else None
        self.model_ = SignClassifier(self._model_config(len(self.classes_)),
                                     seed=self.random_state)
        self.train_report_ = train_fit(self.model_, train_samples, val_samples,
                                       self._train_config())
        return self

    def predict_proba(self, X):
        _check_fitted(self, "model_")
        cfg = NormalizationConfig(enabled=self.normalize,
                                  signing_space_scale=self.signing_space_scale)
        out = []
        for s in as_sign_samples(X):
            if self.normalize:
                s = normalize_sample(s, cfg)
            out.append(self.model_.forward(s))
        return np.stack(out)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]


class PseudoLabelClassifier(_ConfigMixin, ClassifierMixin, BaseEstimator):
    """Semi-supervised classifier: iterative pseudo-label self-training.

    Mark unlabeled samples with ``y == -1``. After ``fit`` the loop
    history is available as ``ssl_report_``.
    """

    def __init__(self, *, hidden_dim: int = 108, num_heads: int = 9,
                 num_encoder_blocks: int = 6, num_decoder_blocks: int = 6,
                 ffn_dim: int | None = None, max_sequence_len: int = 204,
                 epochs: int = 100, learning_rate: float = 1e-3, patience: int = 15,
                 validation_fraction: float = 0.0, normalize: bool = True,
                 signing_space_scale: float = 3.0, augment: bool = True,
                 noise_sigma: float = 0.001, max_rotation_deg: float = 13.0,
                 arm_rotation_deg: float = 4.0, max_shear_fraction: float = 0.15,
                 inner_epochs: int = 60, max_cycles: int = 1000,
                 stall_cycles: int | None = None, warm_start_cycles: bool = True,
                 selection: str = "per_class", random_state: int = 0):
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.num_encoder_blocks = num_encoder_blocks
        self.num_decoder_blocks = num_decoder_blocks
        self.ffn_dim = ffn_dim
        self.max_sequence_len = max_sequence_len
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.normalize = normalize
        self.signing_space_scale = signing_space_scale
        self.augment = augment
        self.noise_sigma = noise_sigma
        self.max_rotation_deg = max_rotation_deg
        self.arm_rotation_deg = arm_rotation_deg
        self.max_shear_fraction = max_shear_fraction
        self.inner_epochs = inner_epochs
        self.max_cycles = max_cycles
        self.stall_cycles = stall_cycles
        self.warm_start_cycles = warm_start_cycles
        self.selection = selection
        self.random_state = random_state

    def fit(self, X, y):
        samples, y = self._label_arrays(X, y)
        y = np.asarray(y)
        labeled_mask = y != -1
        if not labeled_mask.any():
            raise ValueError("need at least one labeled sample (y != -1)")
        self.classes_ = np.unique(y[labeled_mask])
        index = {label: i for i, label in enumerate(self.classes_.tolist())}
        labeled = [samples[i].with_label(index[int(y[i])])
                   for i in np.flatnonzero(labeled_mask)]
        unlabeled = [samples[i].with_label(None) for i in np.flatnonzero(~labeled_mask)]
        train_samples, train_labels, val_pairs = self._carve_validation(
            labeled, [s.label for s in labeled])
        train_samples = [s.with_label(l) for s, l in zip(train_samples, train_labels)]
        val_samples = [s.with_label(l) for s, l in val_pairs] if val_pairs else None
        self.model_ = SignClassifier(self._model_config(len(self.classes_)),
                                     seed=self.random_state)
        cfg = SslConfig(
            train=self._train_config(),
            inner_epochs=self.inner_epochs,
            max_cycles=self.max_cycles,
            stall_cycles=self.stall_cycles,
            warm_start=self.warm_start_cycles,
            selection=self.selection,
            seed=self.random_state,
        )
        self.ssl_report_ = run_ssl(self.model_, train_samples, unlabeled,
                                   val_samples, None, cfg)
        return self

    def predict_proba(self, X):
        _check_fitted(self, "model_")
        cfg = NormalizationConfig(enabled=self.normalize,
                                  signing_space_scale=self.signing_space_scale)
        out = []
        for s in as_sign_samples(X):
            if self.normalize:
                s = normalize_sample(s, cfg)
            out.append(self.model_.forward(s))
        return np.stack(out)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]
