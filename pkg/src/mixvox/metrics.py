"""Region classification rules, segmentation overlap, and accuracy metrics.

Two region rules: "mode" hardens each voxel to its argmax bin and takes
the region's most frequent bin (ties to the lower bin); "msb" takes the
highest bin whose thresholded region score is positive, i.e. the highest
grade predicted present, not the most prevalent one. Accuracies are
class-balanced: the arithmetic mean of sensitivity and specificity.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data.exam import Exam, GradeBinning
from .errors import DataError
from .geometry import LESION_KIND

logger = logging.getLogger("mixvox.metrics")

RULE_MODE = "mode"
RULE_MSB = "msb"


def region_histogram_values(grade_map: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError("empty region mask")
    return grade_map[:, mask].mean(axis=1)


def classify_region_mode(grade_map: np.ndarray, mask: np.ndarray) -> int:
    """Most frequent hardened (argmax) bin over the region; ties go low."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError("empty region mask")
    hard = np.argmax(grade_map[:, mask], axis=0)
    counts = np.bincount(hard, minlength=grade_map.shape[0])
    return int(np.argmax(counts))  # first max = lowest bin on ties


def region_scores_values(hist_row: np.ndarray, region_bias: np.ndarray) -> np.ndarray:
    """Inference-side threshold classifier: relu(hist + bias)."""
    return np.maximum(np.asarray(hist_row) + np.asarray(region_bias), 0.0)


def classify_region_msb(scores: np.ndarray) -> int:
    """Highest bin with a positive score (its ceiling bit is 1); bin 0 when
    every score is zero."""
    active = np.nonzero(np.asarray(scores) > 0)[0]
    return int(active.max()) if active.size else 0


def iou(pred_mask: np.ndarray, truth_mask: np.ndarray) -> float:
    """Intersection over union; defined as 1.0 when both masks are empty."""
    pred = np.asarray(pred_mask, dtype=bool)
    truth = np.asarray(truth_mask, dtype=bool)
    if pred.shape != truth.shape:
        raise DataError(f"iou: shape {pred.shape} vs {truth.shape}")
    union = np.logical_or(pred, truth).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, truth).sum() / union)


def binarize_risk(risk_map: np.ndarray, threshold: float = 0.0) -> np.ndarray:
    """Risk is tanh-activated; the midpoint 0 is the declared cut."""
    arr = np.asarray(risk_map)
    if arr.ndim == 4:
        arr = arr[0]
    return arr > threshold


@dataclass
class BinaryRates:
    """Class-balanced accuracy with its parts and confusion counts."""

    balanced: float
    sensitivity: float | None
    specificity: float | None
    tp: int
    fn: int
    tn: int
    fp: int
    flags: list = field(default_factory=list)

    def as_dict(self):
        return asdict(self)


def binary_rates(y_true, y_pred) -> BinaryRates:
    """Rates from boolean labels/predictions; a class absent from y_true is
    flagged and the balanced accuracy falls back to the available rate."""
    t = np.asarray(y_true, dtype=bool)
    p = np.asarray(y_pred, dtype=bool)
    if t.shape != p.shape:
        raise DataError(f"labels shape {t.shape} vs predictions {p.shape}")
    if t.size == 0:
        raise DataError("empty prediction set")
    tp = int(np.sum(t & p))
    fn = int(np.sum(t & ~p))
    tn = int(np.sum(~t & ~p))
    fp = int(np.sum(~t & p))
    flags = []
    sens = tp / (tp + fn) if (tp + fn) else None
    spec = tn / (tn + fp) if (tn + fp) else None
    if sens is None:
        flags.append("no positive cases; sensitivity undefined")
    if spec is None:
        flags.append("no negative cases; specificity undefined")
    rates = [r for r in (sens, spec) if r is not None]
    if not rates:
        raise DataError("no cases at all")
    return BinaryRates(
        balanced=float(sum(rates) / len(rates)),
        sensitivity=sens, specificity=spec,
        tp=tp, fn=fn, tn=tn, fp=fp, flags=flags,
    )


@dataclass
class RegionPrediction:
    exam_id: str
    region_id: str
    kind: int
    rule: str
    predicted_bin: int
    histogram: np.ndarray
    scores: np.ndarray | None = None  # msb rule only
    truth_bin: int | None = None
    pirads: int | None = None


def predict_exam_regions(grade_map: np.ndarray, exam: Exam, binning: GradeBinning,
                         rule: str, region_bias: np.ndarray | None = None) -> list:
    """Classify every region of an exam under the given rule."""
    if rule not in (RULE_MODE, RULE_MSB):
        raise DataError(f"unknown region rule {rule!r}")
    if rule == RULE_MSB and region_bias is None:
        raise DataError("msb rule needs the trained region bias")
    preds = []
    for r in exam.regions:
        hist = region_histogram_values(grade_map, r.mask)
        if rule == RULE_MODE:
            b = classify_region_mode(grade_map, r.mask)
            scores = None
        else:
            scores = region_scores_values(hist, region_bias)
            b = classify_region_msb(scores)
        preds.append(RegionPrediction(
            exam_id=exam.exam_id, region_id=r.region_id, kind=r.kind, rule=rule,
            predicted_bin=b, histogram=hist, scores=scores,
            truth_bin=r.grade_bin(binning), pirads=r.pirads,
        ))
    return preds


def _cs_pairs(predictions, binning: GradeBinning, kinds=None):
    thr = binning.cs_bin_threshold
    t, p = [], []
    for pred in predictions:
        if kinds is not None and pred.kind not in kinds:
            continue
        if pred.truth_bin is None:
            continue
        t.append(pred.truth_bin >= thr)
        p.append(pred.predicted_bin >= thr)
    return np.asarray(t, dtype=bool), np.asarray(p, dtype=bool)


def lesion_accuracy(predictions, binning: GradeBinning) -> BinaryRates:
    """Class-balanced CS-vs-not accuracy over graded lesion regions."""
    t, p = _cs_pairs(predictions, binning, kinds={LESION_KIND})
    if t.size == 0:
        raise DataError("no graded lesion predictions")
    return binary_rates(t, p)


def region_accuracy(predictions, binning: GradeBinning) -> BinaryRates:
    t, p = _cs_pairs(predictions, binning, kinds=None)
    if t.size == 0:
        raise DataError("no graded region predictions")
    return binary_rates(t, p)


def gland_accuracy(predictions, binning: GradeBinning, via="lesions") -> BinaryRates:
    """Exam-level accuracy: max prediction vs max truth per exam.

    via="lesions" reduces over lesion regions only (exams without lesion
    predictions fall back to all regions and are flagged); via="regions"
    always uses every graded region.
    """
    thr = binning.cs_bin_threshold
    per_exam = {}
    for pred in predictions:
        if pred.truth_bin is None:
            continue
        per_exam.setdefault(pred.exam_id, []).append(pred)
    if not per_exam:
        raise DataError("no graded predictions for gland accuracy")
    t, p, flags = [], [], []
    for exam_id, preds in per_exam.items():
        chosen = [q for q in preds if q.kind == LESION_KIND] if via == "lesions" else preds
        if not chosen:
            chosen = preds
            flags.append(f"{exam_id}: no lesion predictions, used all regions")
        t.append(max(q.truth_bin for q in chosen) >= thr)
        p.append(max(q.predicted_bin for q in chosen) >= thr)
    rates = binary_rates(np.asarray(t), np.asarray(p))
    rates.flags.extend(flags)
    return rates


def pirads_baseline(predictions, binning: GradeBinning, cutoff: int) -> BinaryRates:
    """Classify CS-PCa as pirads >= cutoff over graded lesions; lesions
    missing a pirads score are excluded and counted in the flags."""
    if cutoff not in (4, 5):
        raise DataError(f"pirads cutoff must be 4 or 5, got {cutoff}")
    thr = binning.cs_bin_threshold
    t, p = [], []
    missing = 0
    for pred in predictions:
        if pred.kind != LESION_KIND or pred.truth_bin is None:
            continue
        if pred.pirads is None:
            missing += 1
            continue
        t.append(pred.truth_bin >= thr)
        p.append(pred.pirads >= cutoff)
    if not t:
        raise DataError("no lesions with pirads for the baseline")
    rates = binary_rates(np.asarray(t), np.asarray(p))
    if missing:
        rates.flags.append(f"{missing} lesions excluded (missing pirads)")
    return rates


@dataclass
class MetricsReport:
    experiment_id: str
    rule: str
    iou_mean: float | None
    lesion: dict | None
    gland_via_lesions: dict | None
    gland_via_regions: dict | None
    region: dict | None
    pirads_ge4: dict | None
    pirads_ge5: dict | None
    num_exams: int = 0
    num_lesions: int = 0
    flags: list = field(default_factory=list)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    def to_csv(self, path) -> None:
        rows = []

        def emit(group, entry):
            if entry is None:
                return
            for key in ("balanced", "sensitivity", "specificity"):
                value = entry.get(key)
                if value is not None:
                    rows.append((self.experiment_id, group, key, f"{value:.6f}"))

        if self.iou_mean is not None:
            rows.append((self.experiment_id, "segmentation", "iou", f"{self.iou_mean:.6f}"))
        emit("lesion", self.lesion)
        emit("gland_via_lesions", self.gland_via_lesions)
        emit("gland_via_regions", self.gland_via_regions)
        emit("region", self.region)
        emit("pirads_ge4", self.pirads_ge4)
        emit("pirads_ge5", self.pirads_ge5)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("experiment", "group", "metric", "value"))
            writer.writerows(rows)
