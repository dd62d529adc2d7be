"""Pose-based sign language recognition with pseudo-label self-training.

The package layers cleanly: ``tensor`` is a from-scratch float64 autodiff
core; ``data`` defines pose sequences, file I/O, and dataset splits;
``preprocess`` handles signing-space normalization and augmentation;
``model`` is the class-query transformer; ``training`` and
``pseudolabel`` implement supervised fitting and the self-training loop;
``estimators`` exposes it all through a scikit-learn style API; ``cli``
drives experiments end to end.
"""

from sslr.data import (
    DatasetSplit,
    JointLayout,
    PoseDataset,
    SignSample,
    generate_synthetic,
    load_dataset,
    mask_labels,
    save_dataset,
    split_train_val_test,
    subset_classes,
)
from sslr.estimators import (
    PoseAugmenter,
    PoseNormalizer,
    PseudoLabelClassifier,
    SignTransformerClassifier,
)
from sslr.model import ModelConfig, SignClassifier
from sslr.preprocess import (
    AugmentationConfig,
    NormalizationConfig,
    augment,
    normalize_sample,
)
from sslr.pseudolabel import (
    PseudoLabelBatch,
    SslConfig,
    SslReport,
    run_fsl_baseline,
    run_ssl,
    select_pseudo_labels,
)
from sslr.tensor import (
    GradientTape,
    NonFiniteError,
    SgdOptimizer,
    ShapeError,
    Tensor,
    UsageError,
    backward,
    cross_entropy,
    layer_norm,
    matmul,
    no_grad,
    sgd_step,
    softmax,
)
from sslr.training import Evaluation, TrainConfig, TrainReport, evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "AugmentationConfig",
    "DatasetSplit",
    "Evaluation",
    "GradientTape",
    "JointLayout",
    "ModelConfig",
    "NonFiniteError",
    "NormalizationConfig",
    "PoseAugmenter",
    "PoseDataset",
    "PoseNormalizer",
    "PseudoLabelBatch",
    "PseudoLabelClassifier",
    "SgdOptimizer",
    "ShapeError",
    "SignClassifier",
    "SignSample",
    "SignTransformerClassifier",
    "SslConfig",
    "SslReport",
    "Tensor",
    "TrainConfig",
    "TrainReport",
    "UsageError",
    "augment",
    "backward",
    "cross_entropy",
    "evaluate",
    "fit",
    "generate_synthetic",
    "layer_norm",
    "load_dataset",
    "mask_labels",
    "matmul",
    "no_grad",
    "normalize_sample",
    "run_fsl_baseline",
    "run_ssl",
    "save_dataset",
    "select_pseudo_labels",
    "sgd_step",
    "softmax",
    "split_train_val_test",
    "subset_classes",
    "__version__",
]
