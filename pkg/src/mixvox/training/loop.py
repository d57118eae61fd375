"""Training loop: balanced batches, AdamW steps, validation checkpointing.

A run is deterministic given (config, seed): batch order, augmentation
draws and parameter updates all flow from one seeded generator. Validation
after every epoch scores lesion-level class-balanced accuracy under the
experiment's own inference rule (mode for map-based experiments, msb once
the region classifier is trained); experiments that train neither grading
path fall back to segmentation IoU for checkpoint selection. The best-
by-validation parameters are kept alongside the last.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import Tensor, no_grad, seeded_rng
from ..checkpoint import OptimizerState, save_checkpoint
from ..data.exam import GradeBinning
from ..data.normalize import normalize_exam
from ..errors import ConfigError, DataError, NonFiniteGradientError
from ..losses import exam_targets, gates_from_experiment, total_objective
from ..metrics import (
    RULE_MODE,
    RULE_MSB,
    binarize_risk,
    binary_rates,
    gland_accuracy,
    iou,
    lesion_accuracy,
    predict_exam_regions,
)
from ..model import GradeNet, ModelConfig
from .adamw import adamw_step
from .augment import AugmentConfig, apply_augment
from .sampler import epoch_batches, stratify

logger = logging.getLogger("mixvox.training")


@dataclass
class TrainConfig:
    experiment_id: str = "1111"
    loss_weights: tuple = (1.0, 0.5, 1.0, 1.0)
    batch_size: int = 6
    learning_rate: float = 0.0001
    epochs: int = 20  # full-scale runs use 500
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    literal_dice: bool = False
    hist_high_variant: str = "log"
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        gates_from_experiment(self.experiment_id)  # validates
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


def inference_rule_for(experiment_id: str) -> str | None:
    """Matching region rule: msb once the classifier bit is on, mode when a
    grading term trains the map, None when neither (segmentation only)."""
    a_rc, a_hist, a_gg, _ = gates_from_experiment(experiment_id)
    if a_rc:
        return RULE_MSB
    if a_hist or a_gg:
        return RULE_MODE
    return None


@dataclass
class TrainResult:
    best_params: dict
    best_epoch: int
    best_metric: float
    best_metric_name: str
    history: list
    net: GradeNet
    optimizer: OptimizerState

    def restore_best(self) -> GradeNet:
        net = GradeNet(self.net.config)
        for name, arr in self.best_params.items():
            net.params[name].data = arr.copy()
        return net


def _snapshot(net: GradeNet) -> dict:
    return {name: p.data.copy() for name, p in net.params.items()}


def validate_model(net: GradeNet, exams, binning: GradeBinning, rule: str | None):
    """Score a validation set; returns (metric_name, value, detail)."""
    preds = []
    ious = []
    with no_grad():
        for exam in exams:
            x = Tensor(exam.channels)
            risk, grade = net.forward(x)
            ious.append(iou(binarize_risk(risk.data), exam.lesion_union_mask()))
            if rule is not None:
                preds.extend(predict_exam_regions(
                    grade.data, exam, binning, rule,
                    region_bias=net.region_bias.data,
                ))
    mean_iou = float(np.mean(ious)) if ious else 0.0
    thresholds = [float(v) for v in net.region_bias.data]
    if rule is None:
        return "val_iou", mean_iou, {"iou": mean_iou, "region_bias": thresholds}
    lesion_preds = [p for p in preds if p.kind == 1 and p.truth_bin is not None]
    if lesion_preds:
        rates = lesion_accuracy(preds, binning)
        return "val_lesion_balanced_accuracy", rates.balanced, {
            "iou": mean_iou, "region_bias": thresholds, **rates.as_dict(),
        }
    logger.warning("validation set has no graded lesions; using gland accuracy")
    rates = gland_accuracy(preds, binning, via="regions")
    return "val_gland_balanced_accuracy", rates.balanced, {
        "iou": mean_iou, "region_bias": thresholds, **rates.as_dict(),
    }


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, train_exams, val_exams,
          binning: GradeBinning | None = None, out_dir=None,
          normalized: bool = False, max_steps: int | None = None) -> TrainResult:
    """Train on a list of exams; returns the best and last parameters.

    Exams are normalized once up front unless `normalized` says they
    already are. With out_dir set, a JSON-lines log plus best/last
    checkpoints are written there.
    """
    if not train_exams:
        raise DataError("empty training set")
    binning = binning or GradeBinning.for_bins(model_cfg.num_bins)
    if binning.num_bins != model_cfg.num_bins:
        raise ConfigError(
            f"binning has {binning.num_bins} bins, model expects {model_cfg.num_bins}"
        )
    gates = gates_from_experiment(train_cfg.experiment_id)
    rule = inference_rule_for(train_cfg.experiment_id)

    train_set = train_exams if normalized else [normalize_exam(e) for e in train_exams]
    val_set = val_exams if normalized else [normalize_exam(e) for e in val_exams]

    grades = {}
    for e in train_set:
        grades[e.exam_id] = e.max_grade_group()
    strata = stratify(grades)
    nonempty = sum(1 for ids in strata.values() if ids)
    if train_cfg.batch_size < nonempty:
        raise ConfigError(
            f"batch_size {train_cfg.batch_size} < {nonempty} nonempty strata; "
            "round-robin cannot cycle"
        )
    by_id = {e.exam_id: e for e in train_set}

    net = GradeNet(model_cfg)
    optimizer = OptimizerState()
    rng = seeded_rng(train_cfg.seed)
    targets_cache = {e.exam_id: exam_targets(e, binning) for e in train_set}

    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "training_log.jsonl", "w")

    def emit(record):
        if log_fh is not None:
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()

    history = []
    best = (-np.inf, -1, None)  # metric, epoch, params
    best_name = "val_lesion_balanced_accuracy"
    step = 0
    t_start = time.time()
    stop = False
    try:
        for epoch in range(train_cfg.epochs):
            for batch in epoch_batches(strata, train_cfg.batch_size, rng):
                exams = [by_id[eid] for eid in batch]
                if train_cfg.augment.flip_lr or train_cfg.augment.max_shift:
                    exams = [apply_augment(e, train_cfg.augment, rng) for e in exams]
                    tgts = [exam_targets(e, binning) for e in exams]
                else:
                    tgts = [targets_cache[eid] for eid in batch]
                outputs = [net.forward(Tensor(e.channels)) for e in exams]
                breakdown = total_objective(
                    outputs, tgts, net.region_scores, gates, train_cfg.loss_weights,
                    literal_dice=train_cfg.literal_dice,
                    hist_high_variant=train_cfg.hist_high_variant,
                )
                record = {"step": step, "epoch": epoch,
                          "lr": train_cfg.learning_rate, **breakdown.log_record()}
                if breakdown.total is None:
                    logger.warning("step %d: batch skipped (no active terms)", step)
                    emit(record)
                    step += 1
                    continue
                net.zero_grad()
                breakdown.total.backward()
                grads = {n: p.grad for n, p in net.params.items() if p.grad is not None}
                try:
                    adamw_step(
                        net.params, grads, optimizer,
                        lr=train_cfg.learning_rate, beta1=train_cfg.beta1,
                        beta2=train_cfg.beta2, eps=train_cfg.adam_eps,
                        weight_decay=train_cfg.weight_decay, no_decay=net.no_decay,
                    )
                except NonFiniteGradientError as exc:
                    logger.warning("step %d rejected: %s", step, exc)
                    record["incident"] = str(exc)
                emit(record)
                step += 1
                if max_steps is not None and step >= max_steps:
                    stop = True
                    break
            if stop:
                break
            name, value, detail = validate_model(net, val_set, binning, rule)
            best_name = name
            entry = {"epoch": epoch, "metric": name, "value": value, **detail}
            history.append(entry)
            emit({"epoch": epoch, "validation": entry})
            # ties keep the latest epoch: among equal-validation checkpoints
            # the most-trained one carries the best-calibrated thresholds
            if value >= best[0]:
                best = (value, epoch, _snapshot(net))
    finally:
        if log_fh is not None:
            log_fh.close()

    if best[2] is None:  # zero epochs or early stop before any validation
        best = (0.0, -1, _snapshot(net))
    logger.info("training done in %.1fs: best %s=%.4f at epoch %d",
                time.time() - t_start, best_name, best[0], best[1])
    result = TrainResult(
        best_params=best[2], best_epoch=best[1], best_metric=float(best[0]),
        best_metric_name=best_name, history=history, net=net, optimizer=optimizer,
    )
    if out_dir is not None:
        save_checkpoint(out_dir / "last.ckpt", net, optimizer, history)
        best_net = result.restore_best()
        save_checkpoint(out_dir / "best.ckpt", best_net, OptimizerState(), history)
    return result
