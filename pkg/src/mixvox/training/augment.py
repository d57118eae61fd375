"""Training-time augmentation: left-right flips and small translations.

Both are off by default and never applied at inference. A flip mirrors the
x axis and swaps the left/right sextant labels so region ids keep their
anatomical meaning; translations are clamped so no mask voxel ever leaves
the volume, which preserves the sextant partition invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..data.exam import Exam, RegionRecord


@dataclass
class AugmentConfig:
    flip_lr: bool = False
    max_shift: int = 0  # voxels, per axis


def _swap_side(region_id: str) -> str:
    if region_id.startswith("left_"):
        return "right_" + region_id[len("left_"):]
    if region_id.startswith("right_"):
        return "left_" + region_id[len("right_"):]
    return region_id


def flip_lr(exam: Exam) -> Exam:
    regions = [
        RegionRecord(
            region_id=_swap_side(r.region_id),
            mask=np.ascontiguousarray(r.mask[::-1]),
            kind=r.kind, grade_group=r.grade_group, pirads=r.pirads,
        )
        for r in exam.regions
    ]
    return replace(
        exam,
        channels=np.ascontiguousarray(exam.channels[:, ::-1]),
        gland_mask=np.ascontiguousarray(exam.gland_mask[::-1]),
        regions=regions,
    )


def _mask_margins(exam: Exam):
    """Per-axis slack before any mask voxel would be pushed out of bounds."""
    union = exam.gland_mask.copy()
    for r in exam.regions:
        union |= r.mask
    lo, hi = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        occ = np.nonzero(union.any(axis=other))[0]
        lo.append(int(occ[0]))
        hi.append(int(union.shape[axis] - 1 - occ[-1]))
    return lo, hi


def _shift_volume(vol: np.ndarray, shift, fill=0):
    out = np.full_like(vol, fill)
    src = [slice(None)] * vol.ndim
    dst = [slice(None)] * vol.ndim
    offset = vol.ndim - 3
    for axis, d in enumerate(shift):
        n = vol.shape[offset + axis]
        if d >= 0:
            src[offset + axis] = slice(0, n - d)
            dst[offset + axis] = slice(d, n)
        else:
            src[offset + axis] = slice(-d, n)
            dst[offset + axis] = slice(0, n + d)
    out[tuple(dst)] = vol[tuple(src)]
    return out


def translate(exam: Exam, shift) -> Exam:
    lo, hi = _mask_margins(exam)
    shift = tuple(int(np.clip(d, -lo[i], hi[i])) for i, d in enumerate(shift))
    if shift == (0, 0, 0):
        return exam
    regions = [
        replace(r, mask=_shift_volume(r.mask, shift)) for r in exam.regions
    ]
    return replace(
        exam,
        channels=_shift_volume(exam.channels, shift),
        gland_mask=_shift_volume(exam.gland_mask, shift),
        regions=regions,
    )


def apply_augment(exam: Exam, cfg: AugmentConfig, rng: np.random.Generator) -> Exam:
    if cfg.flip_lr and rng.uniform() < 0.5:
        exam = flip_lr(exam)
    if cfg.max_shift > 0:
        shift = rng.integers(-cfg.max_shift, cfg.max_shift + 1, size=3)
        exam = translate(exam, tuple(int(d) for d in shift))
    return exam
