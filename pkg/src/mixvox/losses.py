"""Supervision terms and the gated multi-task objective.

Strong terms: soft dice plus class-balanced BCE on the lesion-risk volume,
and voxel-wise cross-entropy on the grade volume inside graded lesions.
Weak terms work on per-region soft histograms (mean grade membership over
the region's voxels): lesions penalize all mass off the labelled bin;
sextants, where only the max grade is known, penalize only the aggregate
mass above it, leaving the distribution below unconstrained. The region
classifier term trains the threshold bias behind the multi-hot region
scores. Every log is clamped at the global epsilon floor, and every term
is a nonnegative scalar minimized at its ideal prediction.

The composed objective gates each term by the experiment's bit vector and
drops terms whose ground truth is absent from the batch, flagging them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tensor,
    add,
    clamp,
    epsilon,
    log,
    masked_select,
    mean,
    mul,
    neg,
    sub,
    tensor_sum,
)
from .data.exam import Exam, GradeBinning
from .errors import ConfigError, DataError
from .geometry import LESION_KIND, SEXTANT_KIND

logger = logging.getLogger("mixvox.losses")

TERM_NAMES = ("seg_dice", "seg_bce", "ggmap", "hist_strong", "hist_high",
              "region_classifier")

# Experiment bit positions: region-classifier, histogram pair, grade map,
# segmentation -- in the written order of a 4-bit experiment id.
GATE_NAMES = ("region_classifier", "hist", "ggmap", "segmentation")


def gates_from_experiment(experiment_id: str):
    if len(experiment_id) != 4 or any(c not in "01" for c in experiment_id):
        raise ConfigError(
            f"experiment id must be 4 bits of 0/1, got {experiment_id!r}"
        )
    return tuple(int(c) for c in experiment_id)


@dataclass
class RegionTarget:
    region_id: str
    mask: np.ndarray
    kind: int
    bin: int | None  # grade bin under the active binning; None = ungraded


@dataclass
class ExamTargets:
    exam_id: str
    y_seg: np.ndarray
    regions: list


def exam_targets(exam: Exam, binning: GradeBinning) -> ExamTargets:
    regions = [
        RegionTarget(r.region_id, r.mask, r.kind, r.grade_bin(binning))
        for r in exam.regions
    ]
    return ExamTargets(exam.exam_id, exam.lesion_union_mask(), regions)


def _scalar(value, like: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _average(terms, like: Tensor) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return mul(total, _scalar(1.0 / len(terms), like))


def _pick(row: Tensor, index: int, num_bins: int) -> Tensor:
    sel = np.zeros(num_bins)
    sel[index] = 1.0
    return tensor_sum(mul(row, Tensor(sel.astype(row.data.dtype))))


def risk_to_probability(risk_map: Tensor) -> Tensor:
    """Map the tanh-activated risk in (-1,1) onto a probability in (0,1)."""
    return mul(add(risk_map, _scalar(1.0, risk_map)), _scalar(0.5, risk_map))


def region_histograms(grade_map: Tensor, regions, notes=None):
    """Per-region soft histograms: mean grade membership over region voxels.

    Returns (rows, used) where rows[i] is a (K,) tensor for regions[i] in
    `used`. Empty masks are skipped and reported, never silently zeroed.
    """
    rows, used = [], []
    for region in regions:
        mask = np.asarray(region.mask, dtype=bool)
        if not mask.any():
            msg = f"region {region.region_id!r}: empty mask, skipped in histogram"
            logger.warning(msg)
            if notes is not None:
                notes.append(msg)
            continue
        rows.append(mean(masked_select(grade_map, mask), axis=1))
        used.append(region)
    return rows, used


def loss_seg_dice(y_seg, prob_map: Tensor, literal=False) -> Tensor:
    """Soft dice on the lesion probability map; 0 at perfect overlap.

    With literal=True the factor-2 numerator is dropped (an ablation that
    floors at 0.5 for perfect overlap instead of 0).
    """
    y = Tensor(np.asarray(y_seg, dtype=prob_map.data.dtype).reshape(prob_map.data.shape))
    inter = tensor_sum(mul(y, prob_map))
    denom = add(add(tensor_sum(y), tensor_sum(prob_map)), _scalar(epsilon(), prob_map))
    factor = 1.0 if literal else 2.0
    return sub(_scalar(1.0, prob_map), mul(_scalar(factor, prob_map), inter) / denom)


def loss_seg_bce(y_seg, prob_map: Tensor, notes=None) -> Tensor:
    """Binary cross entropy averaged per class then over the present classes.

    Class balance: each class contributes its mean voxel BCE, so a 90/10
    split weighs like a 50/50 one. An absent class is omitted and the class
    divisor reduced, with a report.
    """
    y = np.asarray(y_seg, dtype=bool)
    if y.shape == prob_map.data.shape[1:]:
        y = y[None]
    p = clamp(prob_map, min_value=epsilon(), max_value=1.0 - epsilon())
    terms = []
    if y.any():
        fg = masked_select(p, y.reshape(p.data.shape))
        terms.append(mean(neg(log(fg))))
    if (~y).any():
        bg = masked_select(p, (~y).reshape(p.data.shape))
        terms.append(mean(neg(log(sub(_scalar(1.0, p), bg)))))
    if not terms:
        raise DataError("segmentation target has no voxels")
    if len(terms) == 1:
        msg = "seg-bce: one class absent from target; averaging over 1 class"
        logger.warning(msg)
        if notes is not None:
            notes.append(msg)
    return _average(terms, prob_map)


def loss_segmentation(y_seg, risk_map: Tensor, literal_dice=False, notes=None):
    """Combined lesion objective: (dice, bce) on the probability-mapped risk."""
    prob = risk_to_probability(risk_map)
    return loss_seg_dice(y_seg, prob, literal=literal_dice), loss_seg_bce(y_seg, prob, notes=notes)


def loss_ggmap(grade_map: Tensor, strong_regions) -> Tensor:
    """Voxel-wise grading cross entropy over graded lesions.

    Per region: mean over its voxels of the negative log membership of the
    labelled bin; then averaged over the regions.
    """
    if not strong_regions:
        raise DataError("loss_ggmap: no graded lesion regions")
    num_bins = grade_map.data.shape[0]
    terms = []
    for region in strong_regions:
        sel = masked_select(grade_map, np.asarray(region.mask, dtype=bool))
        logp = log(clamp(sel, min_value=epsilon(), max_value=None))
        onehot = np.zeros((num_bins, 1))
        onehot[region.bin, 0] = 1.0
        picked = tensor_sum(mul(logp, Tensor(onehot.astype(grade_map.data.dtype))), axis=0)
        terms.append(neg(mean(picked)))
    return _average(terms, grade_map)


def loss_hist_strong(rows, bins) -> Tensor:
    """Lesion histogram term: negative log of the labelled bin's mass."""
    if not rows:
        raise DataError("loss_hist_strong: no graded lesion histograms")
    terms = []
    for row, k in zip(rows, bins):
        picked = _pick(row, k, row.data.shape[0])
        terms.append(neg(log(clamp(picked, min_value=epsilon(), max_value=None))))
    return _average(terms, rows[0])


def loss_hist_high(rows, bins, variant="log") -> Tensor:
    """Sextant histogram term: suppress mass above the known max grade.

    Zero iff no mass sits above the labelled bin; identically zero for the
    top bin. variant="log" uses -log(1 - m + eps) over the above-bin mass
    m; variant="linear" penalizes m directly.
    """
    if variant not in ("log", "linear"):
        raise ConfigError(f"hist_high variant must be log|linear, got {variant!r}")
    if not rows:
        raise DataError("loss_hist_high: no graded sextant histograms")
    terms = []
    for row, k in zip(rows, bins):
        num_bins = row.data.shape[0]
        if k >= num_bins - 1:
            terms.append(Tensor(np.asarray(0.0, dtype=row.data.dtype)))
            continue
        above = np.zeros(num_bins)
        above[k + 1:] = 1.0
        mass = tensor_sum(mul(row, Tensor(above.astype(row.data.dtype))))
        if variant == "linear":
            terms.append(mass)
            continue
        arg = clamp(
            add(sub(_scalar(1.0, row), mass), _scalar(epsilon(), row)),
            min_value=epsilon(), max_value=1.0,
        )
        terms.append(neg(log(arg)))
    return _average(terms, rows[0])


def loss_region_classifier(score_rows, targets) -> Tensor:
    """Multi-hot region score term over the thresholded histograms.

    Targets per region: lesions with a known grade constrain every bin
    (one at the labelled bin, zero elsewhere); sextants constrain only the
    labelled bin (one) and the bins above it (zero), leaving lower bins
    free as expected for heterogeneous tissue.
    """
    if not score_rows:
        raise DataError("loss_region_classifier: no graded regions")
    eps = epsilon()
    terms = []
    for scores, (k, kind) in zip(score_rows, targets):
        num_bins = scores.data.shape[0]
        constrained = range(num_bins) if kind == LESION_KIND else range(k, num_bins)
        parts = []
        for j in constrained:
            sj = _pick(scores, j, num_bins)
            if j == k:
                v = clamp(sj, min_value=0.0, max_value=1.0 - eps)
                parts.append(neg(log(add(v, _scalar(eps, scores)))))
            else:
                v = clamp(sj, min_value=0.0, max_value=1.0)
                arg = clamp(add(sub(_scalar(1.0, scores), v), _scalar(eps, scores)),
                            min_value=eps, max_value=1.0)
                parts.append(neg(log(arg)))
        total = parts[0]
        for part in parts[1:]:
            total = add(total, part)
        terms.append(total)
    return _average(terms, score_rows[0])


@dataclass
class LossBreakdown:
    """Per-term scalars plus the composed total for one batch."""

    values: dict = field(default_factory=dict)  # term name -> float (active only)
    active: dict = field(default_factory=dict)  # term name -> bool
    gates: tuple = (1, 1, 1, 1)
    weights: tuple = (1.0, 0.5, 1.0, 1.0)
    notes: list = field(default_factory=list)
    total: Tensor | None = None

    @property
    def total_value(self) -> float | None:
        return None if self.total is None else float(self.total.data)

    def log_record(self) -> dict:
        # Inactive terms are absent from the record by design.
        rec = {name: self.values[name] for name in TERM_NAMES if self.active.get(name)}
        rec["total"] = self.total_value
        if self.notes:
            rec["notes"] = list(self.notes)
        return rec


def total_objective(outputs, targets, region_scorer, gates, weights=(1.0, 0.5, 1.0, 1.0),
                    literal_dice=False, hist_high_variant="log") -> LossBreakdown:
    """Compose the gated multi-task objective over a batch.

    outputs: [(risk, grade)] per exam; targets: matching ExamTargets;
    region_scorer: callable mapping a histogram row to region scores.
    Region-indexed terms pool regions across the whole batch; the
    segmentation term averages per-exam. Terms whose ground truth is absent
    are dropped from the sum and flagged inactive.
    """
    if len(outputs) != len(targets):
        raise ConfigError("outputs and targets length mismatch")
    a_rc, a_hist, a_gg, a_seg = gates
    w_rc, w_hist, w_gg, w_seg = weights
    breakdown = LossBreakdown(gates=tuple(gates), weights=tuple(weights))
    notes = breakdown.notes

    seg_terms = []
    strong_regions = []   # (exam_idx, RegionTarget), graded lesions
    weak_regions = []     # graded sextants
    graded_regions = []   # all graded regions
    for i, (out, tgt) in enumerate(zip(outputs, targets)):
        risk, grade = out
        if a_seg:
            seg_terms.append(loss_segmentation(tgt.y_seg, risk, literal_dice, notes))
        for region in tgt.regions:
            if region.bin is None:
                continue
            graded_regions.append((i, region))
            if region.kind == LESION_KIND:
                strong_regions.append((i, region))
            elif region.kind == SEXTANT_KIND:
                weak_regions.append((i, region))

    need_hists = (a_hist and (strong_regions or weak_regions)) or (a_rc and graded_regions)
    hist_rows = {}
    if need_hists:
        for i, region in graded_regions:
            rows, used = region_histograms(outputs[i][1], [region], notes=notes)
            if used:
                hist_rows[(i, region.region_id)] = (rows[0], region)

    contributions = []

    if a_seg and seg_terms:
        dice = _average([d for d, _ in seg_terms], seg_terms[0][0])
        bce = _average([b for _, b in seg_terms], seg_terms[0][0])
        breakdown.values["seg_dice"] = float(dice.data)
        breakdown.values["seg_bce"] = float(bce.data)
        breakdown.active["seg_dice"] = breakdown.active["seg_bce"] = True
        contributions.append(mul(add(dice, bce), _scalar(w_seg, dice)))
    else:
        breakdown.active["seg_dice"] = breakdown.active["seg_bce"] = False

    strong_avail = [(i, r) for i, r in strong_regions if (i, r.region_id) in hist_rows]
    weak_avail = [(i, r) for i, r in weak_regions if (i, r.region_id) in hist_rows]
    graded_avail = [(i, r) for i, r in graded_regions if (i, r.region_id) in hist_rows]

    if a_gg and strong_regions:
        # Pool graded lesions across the batch: one term per region, then
        # average over all of them regardless of which exam they sit in.
        terms = [loss_ggmap(outputs[i][1], [region]) for i, region in strong_regions]
        gg = _average(terms, terms[0])
        breakdown.values["ggmap"] = float(gg.data)
        breakdown.active["ggmap"] = True
        contributions.append(mul(gg, _scalar(w_gg, gg)))
    else:
        breakdown.active["ggmap"] = False

    if a_hist and strong_avail:
        rows = [hist_rows[(i, r.region_id)][0] for i, r in strong_avail]
        bins = [r.bin for _, r in strong_avail]
        hs = loss_hist_strong(rows, bins)
        breakdown.values["hist_strong"] = float(hs.data)
        breakdown.active["hist_strong"] = True
        contributions.append(mul(hs, _scalar(w_hist, hs)))
    else:
        breakdown.active["hist_strong"] = False

    if a_hist and weak_avail:
        rows = [hist_rows[(i, r.region_id)][0] for i, r in weak_avail]
        bins = [r.bin for _, r in weak_avail]
        hh = loss_hist_high(rows, bins, variant=hist_high_variant)
        breakdown.values["hist_high"] = float(hh.data)
        breakdown.active["hist_high"] = True
        contributions.append(mul(hh, _scalar(w_hist, hh)))
    else:
        breakdown.active["hist_high"] = False

    if a_rc and graded_avail:
        score_rows = [region_scorer(hist_rows[(i, r.region_id)][0]) for i, r in graded_avail]
        tgts = [(r.bin, r.kind) for _, r in graded_avail]
        rc = loss_region_classifier(score_rows, tgts)
        breakdown.values["region_classifier"] = float(rc.data)
        breakdown.active["region_classifier"] = True
        contributions.append(mul(rc, _scalar(w_rc, rc)))
    else:
        breakdown.active["region_classifier"] = False

    if not contributions:
        logger.warning("all objective terms inactive; batch skipped")
        notes.append("all objective terms inactive")
        return breakdown

    total = contributions[0]
    for c in contributions[1:]:
        total = add(total, c)
    breakdown.total = total
    return breakdown
