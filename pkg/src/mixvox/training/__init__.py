from .sampler import batch_stratum_counts, epoch_batches, stratify
from .adamw import adamw_step
from .augment import AugmentConfig, apply_augment, flip_lr, translate
from .loop import TrainConfig, TrainResult, inference_rule_for, train, validate_model

__all__ = [
    "stratify", "epoch_batches", "batch_stratum_counts",
    "adamw_step",
    "AugmentConfig", "apply_augment", "flip_lr", "translate",
    "TrainConfig", "TrainResult", "train", "validate_model", "inference_rule_for",
]
