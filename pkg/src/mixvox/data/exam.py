"""Exam data model: volumes, regions, pathology and grade binning."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, DataError, ShapeError
from ..geometry import LESION_KIND, SEXTANT_KIND

CHANNEL_ROLES = ("t2w", "dwi_highb", "adc")

STRATA = ("ISUP-0", "ISUP-1", "ISUP-2", "ISUP-3-5")

MAX_GRADE_GROUP = 5
CS_GRADE_THRESHOLD = 2  # ISUP grade group >= 2 is clinically significant


def stratum_of_grade(grade: int) -> str:
    """Bucket a max ISUP grade group into its cohort stratum label."""
    if grade <= 0:
        return "ISUP-0"
    if grade == 1:
        return "ISUP-1"
    if grade == 2:
        return "ISUP-2"
    return "ISUP-3-5"


@dataclass(frozen=True)
class GradeBinning:
    """Monotone mapping from ISUP grade groups 0..5 onto K model bins."""

    num_bins: int
    bin_of_grade: tuple

    def __post_init__(self):
        if not 2 <= self.num_bins <= 6:
            raise ConfigError(f"num_bins must be in [2, 6], got {self.num_bins}")
        if len(self.bin_of_grade) != MAX_GRADE_GROUP + 1:
            raise ConfigError("bin_of_grade must map all grades 0..5")
        bins = list(self.bin_of_grade)
        if any(b1 > b2 for b1, b2 in zip(bins, bins[1:])):
            raise ConfigError(f"bin mapping must be monotone, got {bins}")
        if sorted(set(bins)) != list(range(self.num_bins)):
            raise ConfigError(f"bin mapping must cover 0..{self.num_bins - 1}, got {bins}")

    @classmethod
    def cs_detection(cls) -> "GradeBinning":
        """K=2: benign/indolent {0,1} vs clinically significant {2..5}."""
        return cls(2, (0, 0, 1, 1, 1, 1))

    @classmethod
    def full(cls) -> "GradeBinning":
        return cls(6, tuple(range(6)))

    @classmethod
    def for_bins(cls, num_bins: int) -> "GradeBinning":
        if num_bins == 2:
            return cls.cs_detection()
        if num_bins == 6:
            return cls.full()
        # Collapse the top grades into the last bin.
        mapping = tuple(min(g, num_bins - 1) for g in range(MAX_GRADE_GROUP + 1))
        return cls(num_bins, mapping)

    def bin_of(self, grade: int) -> int:
        if not 0 <= grade <= MAX_GRADE_GROUP:
            raise DataError(f"grade group {grade} outside [0, {MAX_GRADE_GROUP}]")
        return self.bin_of_grade[grade]

    def one_hot(self, grade: int) -> np.ndarray:
        v = np.zeros(self.num_bins, dtype=np.float64)
        v[self.bin_of(grade)] = 1.0
        return v

    @property
    def cs_bin_threshold(self) -> int:
        """Smallest bin index that counts as clinically significant."""
        return self.bin_of(CS_GRADE_THRESHOLD)


@dataclass
class RegionRecord:
    """One region's geometry and pathology ground truth."""

    region_id: str
    mask: np.ndarray
    kind: int  # LESION_KIND (targeted, strong) or SEXTANT_KIND (systematic, weak)
    grade_group: int | None = None  # None when pathology is unknown
    pirads: int | None = None  # lesions only

    def __post_init__(self):
        if self.kind not in (LESION_KIND, SEXTANT_KIND):
            raise DataError(f"region {self.region_id!r}: kind must be 1 or 2, got {self.kind}")
        if self.grade_group is not None and not 0 <= self.grade_group <= MAX_GRADE_GROUP:
            raise DataError(f"region {self.region_id!r}: grade {self.grade_group} out of range")
        if self.pirads is not None and not 1 <= self.pirads <= 5:
            raise DataError(f"region {self.region_id!r}: pirads {self.pirads} out of range")

    def grade_bin(self, binning: GradeBinning) -> int | None:
        return None if self.grade_group is None else binning.bin_of(self.grade_group)

    def one_hot(self, binning: GradeBinning) -> np.ndarray | None:
        return None if self.grade_group is None else binning.one_hot(self.grade_group)


@dataclass
class Exam:
    """One multi-channel 3D exam: the unit of training and inference."""

    exam_id: str
    channels: np.ndarray  # (3, X, Y, Z) float32, roles per CHANNEL_ROLES
    gland_mask: np.ndarray  # (X, Y, Z) bool
    regions: list
    voxel_spacing: tuple = (1.0, 1.0, 2.24)
    cohort_stratum: str = ""

    @property
    def shape(self):
        return self.channels.shape[1:]

    def lesions(self):
        return [r for r in self.regions if r.kind == LESION_KIND]

    def sextants(self):
        return [r for r in self.regions if r.kind == SEXTANT_KIND]

    def max_grade_group(self) -> int | None:
        grades = [r.grade_group for r in self.regions if r.grade_group is not None]
        return max(grades) if grades else None

    def lesion_union_mask(self) -> np.ndarray:
        y = np.zeros(self.shape, dtype=bool)
        for r in self.lesions():
            y |= r.mask
        return y


def validate_exam(exam: Exam) -> None:
    """Check the structural invariants; raises DataError on violation."""
    ch = exam.channels
    if ch.ndim != 4 or ch.shape[0] != len(CHANNEL_ROLES):
        raise ShapeError(f"exam {exam.exam_id}: channels shape {ch.shape}")
    shape = ch.shape[1:]
    if exam.gland_mask.shape != shape:
        raise ShapeError(
            f"exam {exam.exam_id}: gland mask {exam.gland_mask.shape} vs volume {shape}"
        )
    if not exam.gland_mask.any():
        raise DataError(f"exam {exam.exam_id}: empty gland mask")
    if len(exam.voxel_spacing) != 3 or any(s <= 0 for s in exam.voxel_spacing):
        raise DataError(f"exam {exam.exam_id}: bad voxel spacing {exam.voxel_spacing}")
    ids = set()
    for r in exam.regions:
        if r.region_id in ids:
            raise DataError(f"exam {exam.exam_id}: duplicate region {r.region_id!r}")
        ids.add(r.region_id)
        if r.mask.shape != shape:
            raise ShapeError(
                f"exam {exam.exam_id}: region {r.region_id!r} mask {r.mask.shape} vs {shape}"
            )
        if not r.mask.any():
            raise DataError(f"exam {exam.exam_id}: region {r.region_id!r} mask is empty")
    sextants = exam.sextants()
    if sextants:
        union = np.zeros(shape, dtype=np.int32)
        for r in sextants:
            union += r.mask.astype(np.int32)
        if union.max() > 1:
            raise DataError(f"exam {exam.exam_id}: sextant masks overlap")
        if not np.array_equal(union.astype(bool), exam.gland_mask):
            raise DataError(f"exam {exam.exam_id}: sextants do not tile the gland")
    max_grade = exam.max_grade_group()
    if exam.cohort_stratum:
        expected = stratum_of_grade(max_grade if max_grade is not None else 0)
        if exam.cohort_stratum != expected:
            raise DataError(
                f"exam {exam.exam_id}: stratum {exam.cohort_stratum!r} but max grade "
                f"{max_grade} implies {expected!r}"
            )


def with_regions(exam: Exam, regions: list) -> Exam:
    return replace(exam, regions=regions)
