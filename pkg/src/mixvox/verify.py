"""End-to-end gradient verification harness.

Builds a tiny two-level network over an 8x8x4 exam with every supervision
term active and compares backward() gradients of the composed objective
against central finite differences at float64. Also exposes per-term
checks where each loss is probed through smooth carriers (logits behind
tanh/softmax) so the finite differences are taken at differentiable
points.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .autodiff import Tensor, grad_check, seeded_rng
from .data.exam import Exam, GradeBinning, RegionRecord
from .geometry import LESION_KIND, SEXTANT_KIND, compute_sextants
from .losses import (
    exam_targets,
    loss_ggmap,
    loss_hist_high,
    loss_hist_strong,
    loss_region_classifier,
    loss_seg_bce,
    loss_seg_dice,
    loss_segmentation,
    total_objective,
)
from .model import GradeNet, ModelConfig
from . import autodiff as ad


def toy_exam(seed: int = 0, shape=(8, 8, 4)) -> Exam:
    """Deterministic small exam with one graded lesion and six sextants."""
    rng = seeded_rng(seed)
    nx, ny, nz = shape
    xs = np.arange(nx)[:, None, None]
    ys = np.arange(ny)[None, :, None]
    zs = np.arange(nz)[None, None, :]
    gland = (
        ((xs - nx / 2 + 0.5) / (nx * 0.45)) ** 2
        + ((ys - ny / 2 + 0.5) / (ny * 0.45)) ** 2
        + ((zs - nz / 2 + 0.5) / (nz * 0.48)) ** 2
    ) <= 1.0
    sextants, _ = compute_sextants(gland)
    lesion = np.zeros(shape, dtype=bool)
    lesion[3:6, 3:6, 1:3] = True
    lesion &= gland
    regions = [RegionRecord("lesion_0", lesion, LESION_KIND, grade_group=3, pirads=4)]
    grades = {label: 0 for label in sextants}
    grades["left_mid"] = 1
    for label in sorted(sextants):
        regions.append(RegionRecord(label, sextants[label], SEXTANT_KIND,
                                    grade_group=grades[label]))
    channels = rng.normal(0.0, 1.0, size=(3,) + shape)
    return Exam(
        exam_id=f"toy_{seed}",
        channels=channels.astype(np.float64),
        gland_mask=gland,
        regions=regions,
    )


def _toy_net_params(seed: int, base_width=4, depth=2, num_bins=2):
    cfg = ModelConfig(in_channels=3, base_width=base_width, depth=depth,
                      num_bins=num_bins, seed=seed)
    net = GradeNet(cfg, dtype=np.float64)
    # A mildly informative bias keeps relu(hist + bias) away from its kink.
    net.params["region_bias"].data = np.linspace(-0.21, 0.13, num_bins)
    return net


def full_objective_grad_check(seed: int = 202, step: float = 1e-5,
                              tolerance: float = 1e-4, gates=(1, 1, 1, 1),
                              max_entries=None):
    """Finite-difference audit of the composed objective over all params."""
    net = _toy_net_params(seed)
    exam = toy_exam(seed)
    binning = GradeBinning.for_bins(net.config.num_bins)
    targets = [exam_targets(exam, binning)]
    x = Tensor(exam.channels, dtype=np.float64)

    def builder(params):
        net.params = OrderedDict(params)
        outputs = [net.forward(x)]
        breakdown = total_objective(outputs, targets, net.region_scores, gates)
        return breakdown.total

    return grad_check(builder, dict(net.params), step=step, tolerance=tolerance,
                      max_entries=max_entries)


def loss_term_grad_checks(seed: int = 7, step: float = 1e-5, tolerance: float = 1e-4,
                          shape=(4, 4, 2), num_bins=3):
    """Per-term finite-difference checks through smooth logit carriers."""
    rng = seeded_rng(seed)
    reports = {}
    y_seg = rng.uniform(size=shape) < 0.4
    if not y_seg.any():
        y_seg[0, 0, 0] = True

    def seg_builder(term):
        def build(params):
            risk = ad.tanh(params["logits"])
            dice, bce = loss_segmentation(y_seg, risk)
            return {"dice": dice, "bce": bce}[term]
        return build

    logits = {"logits": Tensor(rng.normal(0, 0.8, size=(1,) + shape), dtype=np.float64)}
    reports["seg_dice"] = grad_check(seg_builder("dice"), logits, step=step,
                                     tolerance=tolerance)
    reports["seg_bce"] = grad_check(seg_builder("bce"), logits, step=step,
                                    tolerance=tolerance)

    mask = rng.uniform(size=shape) < 0.5
    if not mask.any():
        mask[0, 0, 0] = True
    region = type("R", (), {"region_id": "r0", "mask": mask, "kind": LESION_KIND,
                            "bin": 1})()

    def gg_build(params):
        grade = ad.softmax(params["logits"], axis=0)
        return loss_ggmap(grade, [region])

    glogits = {"logits": Tensor(rng.normal(0, 0.8, size=(num_bins,) + shape),
                                dtype=np.float64)}
    reports["ggmap"] = grad_check(gg_build, glogits, step=step, tolerance=tolerance)

    def hist_rows(params, count):
        grade = ad.softmax(params["logits"], axis=0)
        rows = []
        for i in range(count):
            m = masks[i]
            rows.append(ad.mean(ad.masked_select(grade, m), axis=1))
        return rows

    masks = []
    for _ in range(3):
        m = rng.uniform(size=shape) < 0.5
        if not m.any():
            m[0, 0, 0] = True
        masks.append(m)

    def hs_build(params):
        return loss_hist_strong(hist_rows(params, 3), [0, 1, 2])

    reports["hist_strong"] = grad_check(hs_build, dict(glogits), step=step,
                                        tolerance=tolerance)

    def hh_build(params):
        return loss_hist_high(hist_rows(params, 3), [0, 1, num_bins - 1])

    reports["hist_high"] = grad_check(hh_build, dict(glogits), step=step,
                                      tolerance=tolerance)

    # Region classifier probed at points away from the relu and clamp kinks.
    hists = [np.array([0.62, 0.25, 0.13]), np.array([0.15, 0.55, 0.30])]
    kinds = [(1, LESION_KIND), (1, SEXTANT_KIND)]

    def rc_build(params):
        rows = [ad.add(Tensor(h), params["bias"]) for h in hists]
        scores = [ad.relu(r) for r in rows]
        return loss_region_classifier(scores, kinds)

    bias = {"bias": Tensor(np.array([-0.31, -0.12, 0.07]), dtype=np.float64)}
    reports["region_classifier"] = grad_check(rc_build, bias, step=step,
                                              tolerance=tolerance)
    return reports
