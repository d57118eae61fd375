from .exam import (
    CHANNEL_ROLES,
    CS_GRADE_THRESHOLD,
    Exam,
    GradeBinning,
    RegionRecord,
    STRATA,
    stratum_of_grade,
    validate_exam,
)
from .normalize import iqr_normalize, normalize_exam, zscore_normalize
from .bundle import FORMAT_VERSION, load_exam, save_exam, save_volume_payload
from .phantom import (
    PhantomConfig,
    PhantomTruth,
    generate_dataset,
    generate_phantom,
    generate_phantom_with_truth,
    stratum_quotas,
)

__all__ = [
    "Exam", "RegionRecord", "GradeBinning", "validate_exam",
    "CHANNEL_ROLES", "STRATA", "CS_GRADE_THRESHOLD", "stratum_of_grade",
    "iqr_normalize", "zscore_normalize", "normalize_exam",
    "save_exam", "load_exam", "save_volume_payload", "FORMAT_VERSION",
    "PhantomConfig", "PhantomTruth", "generate_phantom",
    "generate_phantom_with_truth", "generate_dataset", "stratum_quotas",
]
