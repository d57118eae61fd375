"""Cohort stratification and objective-aware balanced batching.

Exams are bucketed by the max ISUP grade group over their regions
(0 / 1 / 2 / 3-5). Batches cycle round-robin over the nonempty strata so
per-batch stratum counts never differ by more than one; each stratum is
shuffled per epoch, shorter strata are resampled with replacement once
their pass is spent, and the epoch ends with the batch that exhausts the
longest stratum.
"""

from __future__ import annotations

import logging

import numpy as np

from ..data.exam import STRATA, stratum_of_grade
from ..errors import DataError

logger = logging.getLogger("mixvox.training")


def stratify(exam_grades) -> dict:
    """Partition exam ids by bucketed max grade.

    exam_grades: mapping exam_id -> max grade group (int), or an iterable of
    (exam_id, max_grade) pairs. Exams with no graded region (grade None)
    are rejected by id.
    """
    items = exam_grades.items() if hasattr(exam_grades, "items") else exam_grades
    strata = {label: [] for label in STRATA}
    ungraded = []
    for exam_id, grade in items:
        if grade is None:
            ungraded.append(exam_id)
            continue
        strata[stratum_of_grade(int(grade))].append(exam_id)
    if ungraded:
        raise DataError(f"exams with no graded region: {ungraded}")
    empty = [label for label, ids in strata.items() if not ids]
    if empty and any(strata.values()):
        logger.warning("empty strata: %s", ", ".join(empty))
    return strata


def epoch_batches(strata: dict, batch_size: int, rng: np.random.Generator) -> list:
    """One epoch of round-robin balanced batches.

    Returns a list of batches (lists of exam ids). Draws cycle over the
    nonempty strata with a pointer that persists across batches, so counts
    within any batch differ by at most one.
    """
    labels = [label for label in STRATA if strata.get(label)]
    if not labels:
        raise DataError("all strata are empty")
    passes = {label: list(rng.permutation(strata[label])) for label in labels}
    cursors = {label: 0 for label in labels}
    longest = max(labels, key=lambda lb: len(strata[lb]))

    batches = []
    finished = False
    li = 0
    while not finished:
        batch = []
        for _ in range(batch_size):
            label = labels[li % len(labels)]
            li += 1
            cur = cursors[label]
            if cur < len(passes[label]):
                batch.append(passes[label][cur])
                cursors[label] = cur + 1
                if label == longest and cursors[label] == len(passes[label]):
                    finished = True
            else:
                # Short stratum spent: resample with replacement.
                batch.append(strata[label][int(rng.integers(len(strata[label])))])
        batches.append(batch)
    return batches


def batch_stratum_counts(batch, strata: dict) -> dict:
    owner = {eid: label for label, ids in strata.items() for eid in ids}
    counts = {label: 0 for label in strata}
    for eid in batch:
        counts[owner[eid]] += 1
    return counts
