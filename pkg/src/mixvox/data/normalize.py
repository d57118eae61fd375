"""Intensity normalization computed over gland voxels, applied everywhere.

MR amplitudes are arbitrary, so each channel is first rescaled by the
1st/99th percentile range inside the gland and then standardized to zero
mean, unit variance over the gland. Percentiles use linear interpolation
between order statistics; statistics come from gland voxels only but the
transform is applied to the whole volume.
"""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateContrastError
from .exam import Exam


def _gland_values(volume, gland_mask):
    vals = np.asarray(volume, dtype=np.float64)[np.asarray(gland_mask, dtype=bool)]
    if vals.size == 0:
        raise DegenerateContrastError("gland mask selects no voxels")
    return vals


def iqr_normalize(volume, gland_mask, label="", eps=1e-7):
    """Percentile-range rescale: (I - p1) / (p99 - p1), no clipping."""
    vals = _gland_values(volume, gland_mask)
    p1, p99 = np.percentile(vals, [1, 99])
    spread = p99 - p1
    if spread < eps:
        raise DegenerateContrastError(
            f"degenerate contrast{f' in {label}' if label else ''}: "
            f"p99 - p1 = {spread:g} below {eps:g}"
        )
    out = (np.asarray(volume, dtype=np.float64) - p1) / spread
    return out.astype(np.asarray(volume).dtype if np.asarray(volume).dtype.kind == "f" else np.float32)


def zscore_normalize(volume, gland_mask, label="", eps=1e-7):
    """Standardize to zero gland mean and unit gland standard deviation."""
    vals = _gland_values(volume, gland_mask)
    mu = vals.mean()
    sigma = vals.std()
    if sigma < eps:
        raise DegenerateContrastError(
            f"degenerate contrast{f' in {label}' if label else ''}: zero variance"
        )
    out = (np.asarray(volume, dtype=np.float64) - mu) / sigma
    return out.astype(np.asarray(volume).dtype if np.asarray(volume).dtype.kind == "f" else np.float32)


def normalize_exam(exam: Exam) -> Exam:
    """Apply the two-stage normalization to every channel of an exam."""
    out = np.empty_like(exam.channels, dtype=np.float32)
    for c in range(exam.channels.shape[0]):
        label = f"{exam.exam_id}/channel{c}"
        v = iqr_normalize(exam.channels[c], exam.gland_mask, label=label)
        out[c] = zscore_normalize(v, exam.gland_mask, label=label)
    return Exam(
        exam_id=exam.exam_id,
        channels=out,
        gland_mask=exam.gland_mask,
        regions=exam.regions,
        voxel_spacing=exam.voxel_spacing,
        cohort_stratum=exam.cohort_stratum,
    )
