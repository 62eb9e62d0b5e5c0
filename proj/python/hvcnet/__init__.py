"""Branching/merging convolutional network with homogeneous vector capsules.

Thin python surface over the native core: IDX loading, deterministic
augmentation, the model forward pass, checkpoint evaluation, and the
majority-vote ensemble census.
"""

from hvcnet._core import (
    ConfigError,
    DataError,
    DimensionError,
    Model,
    NumericError,
    augment,
    checkpoint_info,
    conv2d_valid,
    ensemble_accuracy,
    enumerate_subsets,
    evaluate_checkpoint,
    load_idx,
    lr_at,
    majority_vote,
    margins,
    read_prediction_matrix,
    train_from_config,
    troublesome,
    write_prediction_matrix,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "Model",
    "NumericError",
    "augment",
    "checkpoint_info",
    "conv2d_valid",
    "ensemble_accuracy",
    "enumerate_subsets",
    "evaluate_checkpoint",
    "load_idx",
    "lr_at",
    "majority_vote",
    "margins",
    "read_prediction_matrix",
    "train_from_config",
    "troublesome",
    "write_prediction_matrix",
]

__version__ = "0.1.0"
