"""Synthetic exam generator.

Builds desk-scale exams with a known voxel-level truth: an ellipsoidal
gland, box-shaped target lesions whose channel intensities encode grade
monotonically (higher grade looks darker on the ADC channel, brighter on
high-b DWI), and optional minority high-grade plants inside sextants or
lesions where cancer occupies only a small fraction of the region and only
the region's max grade is recorded. Raw amplitudes get an arbitrary
per-channel affine rescale so the normalization stage is always exercised.

The voxel grade map is internal truth kept for tests and studies; the Exam
(and its on-disk bundle) only carries region-level pathology like real
biopsy data would.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, GenerationError
from ..geometry import LESION_KIND, SEXTANT_KIND, RegionSpec, build_region_set, compute_sextants
from .exam import CS_GRADE_THRESHOLD, Exam, RegionRecord, STRATA, stratum_of_grade

log = logging.getLogger("mixvox.phantom")

_STRATUM_MAX_GRADE = {0: 0, 1: 1, 2: 2, 3: (3, 4, 5)}


@dataclass
class PhantomConfig:
    shape: tuple = (32, 32, 16)
    voxel_spacing: tuple = (1.0, 1.0, 2.24)
    lesion_count_range: tuple = (2, 3)
    # Cohort stratum proportions for ISUP-0 / 1 / 2 / 3-5 exams.
    stratum_proportions: tuple = (0.135, 0.327, 0.336, 0.202)
    lesion_extent_range: tuple = ((5, 8), (5, 8), (2, 4))
    # Chance a clinically significant lesion hides its cancer in a minority
    # core (fraction strictly below 0.5 of the box, so mode inference
    # cannot see it). Heterogeneous lesions get larger, sloppier boxes, as
    # annotations around diffuse findings tend to be.
    lesion_het_prob: float = 0.55
    lesion_het_fraction: float = 0.28
    lesion_het_fraction_range: tuple = (0.20, 0.35)
    het_extent_range: tuple = ((9, 13), (9, 13), (3, 4))
    # Chance an ISUP>=2 exam also gets a minority high-grade sextant plant.
    sextant_plant_prob: float = 0.2
    sextant_plant_fraction: float = 0.15
    sextant_plant_fraction_range: tuple = (0.08, 0.30)
    # Chance the exam's top grade lives only in a sextant plant (MRI-occult).
    occult_carrier_prob: float = 0.05
    # Chance a lesion's targeted-biopsy pathology is recorded; ungraded
    # lesions keep their mask (and PI-RADS) but carry no grade, so only the
    # always-graded systematic sextants supervise those exams' severity.
    lesion_grade_known_prob: float = 0.3
    # Grade-to-contrast: channel shift = step * grade_contrast_scale[grade].
    # The profile is monotone but nonlinear: GG1 sits close to benign while
    # the clinically significant grades separate clearly, so the hard
    # ambiguity lives inside the benign bin.
    noise_sigma: float = 0.05
    adc_step: float = 0.028
    t2_step: float = 0.012
    dwi_step: float = 0.024
    grade_contrast_scale: tuple = (0.0, 0.6, 3.8, 4.6, 5.2, 6.0)
    raw_scale_range: tuple = (500.0, 1500.0)
    raw_offset_range: tuple = (0.0, 100.0)
    gland_axis_fractions: tuple = ((0.38, 0.44), (0.36, 0.42), (0.36, 0.44))
    max_place_attempts: int = 200

    def __post_init__(self):
        if len(self.shape) != 3 or any(n < 8 for n in self.shape):
            raise ConfigError(f"phantom grid too small: {self.shape}")
        if abs(sum(self.stratum_proportions) - 1.0) > 1e-6:
            raise ConfigError("stratum_proportions must sum to 1")
        if not 0 < self.sextant_plant_fraction <= 1:
            raise ConfigError("sextant_plant_fraction must be in (0, 1]")
        if not 0 < self.lesion_het_fraction <= 1:
            raise ConfigError("lesion_het_fraction must be in (0, 1]")
        if self.lesion_count_range[0] > self.lesion_count_range[1]:
            raise ConfigError("lesion_count_range must be (lo, hi) with lo <= hi")


@dataclass
class PhantomTruth:
    """Generator-internal voxel truth, never serialized with the exam."""

    voxel_grade: np.ndarray
    cs_fraction: dict = field(default_factory=dict)  # region_id -> fraction of CS voxels
    het_lesions: list = field(default_factory=list)
    plant_sextant: str | None = None

    def minority_cs_regions(self):
        """Regions whose recorded grade is CS but CS voxels are a minority."""
        return [rid for rid, f in self.cs_fraction.items() if 0.0 < f < 0.5]


def _make_gland(cfg: PhantomConfig, rng) -> np.ndarray:
    nx, ny, nz = cfg.shape
    dims = np.array(cfg.shape, dtype=np.float64)
    semi = np.array([
        rng.uniform(lo, hi) * dims[i]
        for i, (lo, hi) in enumerate(cfg.gland_axis_fractions)
    ])
    semi = np.minimum(semi, dims / 2.0 - 1.0)
    center = dims / 2.0 + rng.uniform(-0.8, 0.8, size=3)
    xs = np.arange(nx)[:, None, None]
    ys = np.arange(ny)[None, :, None]
    zs = np.arange(nz)[None, None, :]
    r2 = (
        ((xs - center[0]) / semi[0]) ** 2
        + ((ys - center[1]) / semi[1]) ** 2
        + ((zs - center[2]) / semi[2]) ** 2
    )
    return r2 <= 1.0


def _place_box(cfg: PhantomConfig, rng, gland, occupied, extent_range=None) -> np.ndarray | None:
    """Random box fully inside the gland and off any occupied voxels."""
    extent_range = extent_range or cfg.lesion_extent_range
    bounds = []
    for ax in range(3):
        occ = np.nonzero(gland.any(axis=tuple(a for a in range(3) if a != ax)))[0]
        bounds.append((int(occ[0]), int(occ[-1])))
    for _ in range(cfg.max_place_attempts):
        ext = [int(rng.integers(lo, hi + 1)) for lo, hi in extent_range]
        origin = []
        ok = True
        for ax in range(3):
            lo, hi = bounds[ax]
            if hi - lo + 1 < ext[ax]:
                ok = False
                break
            origin.append(int(rng.integers(lo, hi - ext[ax] + 2)))
        if not ok:
            continue
        box = np.zeros(cfg.shape, dtype=bool)
        box[origin[0]:origin[0] + ext[0],
            origin[1]:origin[1] + ext[1],
            origin[2]:origin[2] + ext[2]] = True
        if not (box & ~gland).any() and not (box & occupied).any():
            return box
    return None


def _place_core(rng, region_mask, fraction, frac_range, shape, attempts) -> np.ndarray | None:
    """Box-shaped core covering roughly `fraction` of a region, accepted only
    when the realized fraction stays within frac_range (always below 0.5 so
    the core is a strict minority of the region by construction)."""
    region_size = int(region_mask.sum())
    bbox = [np.nonzero(region_mask.any(axis=tuple(a for a in range(3) if a != ax)))[0]
            for ax in range(3)]
    extents = [int(b[-1] - b[0] + 1) for b in bbox]
    scale = fraction ** (1.0 / 3.0)
    xs, ys, zs = np.nonzero(region_mask)
    for _ in range(attempts):
        ext = [max(1, int(round(extents[a] * scale)) + int(rng.integers(-1, 2)))
               for a in range(3)]
        i = rng.integers(0, xs.size)
        x0, y0, z0 = xs[i], ys[i], zs[i]
        box = np.zeros(shape, dtype=bool)
        box[x0:x0 + ext[0], y0:y0 + ext[1], z0:z0 + ext[2]] = True
        core = box & region_mask
        frac = core.sum() / max(region_size, 1)
        if core.any() and frac_range[0] <= frac <= frac_range[1]:
            return core
    return None


def _synthesize_channels(cfg: PhantomConfig, rng, gland, voxel_grade) -> np.ndarray:
    scale = np.asarray(cfg.grade_contrast_scale, dtype=np.float64)
    g = scale[voxel_grade.astype(np.int64)]
    t2 = np.where(gland, 0.55, 0.18) - cfg.t2_step * g
    dwi = np.where(gland, 0.35, 0.12) + cfg.dwi_step * g
    adc = np.where(gland, 0.60, 0.20) - cfg.adc_step * g
    channels = np.stack([t2, dwi, adc])
    channels += rng.normal(0.0, cfg.noise_sigma, size=channels.shape)
    for c in range(channels.shape[0]):
        scale = rng.uniform(*cfg.raw_scale_range)
        offset = rng.uniform(*cfg.raw_offset_range)
        channels[c] = scale * channels[c] + offset
    return channels.astype(np.float32)


def _pirads_for_grade(rng, grade: int) -> int:
    raw = 1.3 + 0.7 * grade + rng.normal(0.0, 0.6)
    return int(np.clip(round(raw), 1, 5))


def generate_phantom(config: PhantomConfig, seed: int,
                     target_stratum: int | None = None) -> Exam:
    exam, _ = generate_phantom_with_truth(config, seed, target_stratum)
    return exam


def generate_phantom_with_truth(config: PhantomConfig, seed: int,
                                target_stratum: int | None = None):
    """Generate one exam plus its internal voxel truth, deterministic per seed."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    if target_stratum is None:
        target_stratum = int(rng.choice(4, p=np.asarray(config.stratum_proportions)))

    can_lesion = config.lesion_count_range[1] > 0
    can_plant = config.sextant_plant_prob > 0
    if target_stratum == 1 and not can_lesion:
        target_stratum = 0
    if target_stratum >= 2 and not (can_lesion or can_plant):
        target_stratum = 0

    top = _STRATUM_MAX_GRADE[target_stratum]
    top_grade = int(rng.choice(top)) if isinstance(top, tuple) else top

    gland = _make_gland(config, rng)
    sextant_masks, _ = compute_sextants(gland)

    lo, hi = config.lesion_count_range
    n_lesions = int(rng.integers(lo, hi + 1))

    # Who carries the exam's top grade: normally a lesion; occasionally (or
    # when there are no lesions) a sextant plant, mimicking MRI-occult cancer.
    occult = top_grade >= CS_GRADE_THRESHOLD and can_plant and (
        n_lesions == 0 or rng.uniform() < config.occult_carrier_prob
    )
    if top_grade == 1 and n_lesions == 0:
        n_lesions = 1  # grade-1 exams need a lesion to carry the grade

    # One carrier lesion holds the exam's top grade; the rest stay benign or
    # GG1 so region-level positives remain scarce, as in the clinical cohort.
    lesion_grades = []
    for i in range(n_lesions):
        if i == 0 and not occult and top_grade > 0:
            lesion_grades.append(top_grade)
        else:
            cap = min(top_grade, 1)
            lesion_grades.append(int(rng.integers(0, cap + 1)) if cap > 0 else 0)

    voxel_grade = np.zeros(config.shape, dtype=np.int8)
    occupied = np.zeros(config.shape, dtype=bool)
    lesion_specs = []
    truth = PhantomTruth(voxel_grade=voxel_grade)

    for i, grade in enumerate(lesion_grades):
        heterogeneous = (
            grade >= CS_GRADE_THRESHOLD and rng.uniform() < config.lesion_het_prob
        )
        box = _place_box(config, rng, gland, occupied,
                         config.het_extent_range if heterogeneous else None)
        if box is None and heterogeneous:
            heterogeneous = False  # fall back to a regular-size box
            box = _place_box(config, rng, gland, occupied)
        if box is None:
            raise GenerationError(
                f"seed {seed}: could not place lesion {i} after "
                f"{config.max_place_attempts} attempts"
            )
        occupied |= box
        rid = f"lesion_{i}"
        if heterogeneous:
            core = _place_core(rng, box, config.lesion_het_fraction,
                               config.lesion_het_fraction_range,
                               config.shape, config.max_place_attempts)
            if core is None:
                heterogeneous = False
        if heterogeneous:
            voxel_grade[core] = np.maximum(voxel_grade[core], grade)
            truth.het_lesions.append(rid)
        else:
            voxel_grade[box] = np.maximum(voxel_grade[box], grade)
        lesion_specs.append(RegionSpec(rid, box, LESION_KIND))

    plant_mask = None
    if top_grade >= CS_GRADE_THRESHOLD and can_plant and (
        occult or rng.uniform() < config.sextant_plant_prob
    ):
        plant_grade = top_grade if occult else int(
            rng.integers(CS_GRADE_THRESHOLD, top_grade + 1)
        )
        labels = list(sextant_masks)
        order = rng.permutation(len(labels))
        for j in order:
            label = labels[j]
            free = sextant_masks[label] & ~occupied
            if free.sum() < 8:
                continue
            plant_mask = _place_core(rng, free, config.sextant_plant_fraction,
                                     config.sextant_plant_fraction_range,
                                     config.shape, config.max_place_attempts)
            if plant_mask is not None:
                voxel_grade[plant_mask] = np.maximum(voxel_grade[plant_mask], plant_grade)
                truth.plant_sextant = label
                break
        if plant_mask is None and occult:
            raise GenerationError(
                f"seed {seed}: could not place the carrier sextant plant"
            )

    # Region-level ground truth is the max voxel grade inside each region.
    regions = []
    for spec in lesion_specs:
        grade = int(voxel_grade[spec.mask].max()) if spec.mask.any() else 0
        known = rng.uniform() < config.lesion_grade_known_prob
        regions.append(RegionRecord(
            region_id=spec.region_id, mask=spec.mask, kind=LESION_KIND,
            grade_group=grade if known else None,
            pirads=_pirads_for_grade(rng, grade),
        ))
    for label in sorted(sextant_masks):
        mask = sextant_masks[label]
        grade = int(voxel_grade[mask].max()) if mask.any() else 0
        regions.append(RegionRecord(
            region_id=label, mask=mask, kind=SEXTANT_KIND, grade_group=grade,
        ))

    max_grade = max(r.grade_group for r in regions if r.grade_group is not None)
    achieved = stratum_of_grade(max_grade)
    if achieved != STRATA[target_stratum]:
        raise GenerationError(
            f"seed {seed}: realized stratum {achieved} != target {STRATA[target_stratum]}"
        )

    cs = voxel_grade >= CS_GRADE_THRESHOLD
    for r in regions:
        truth.cs_fraction[r.region_id] = float(cs[r.mask].sum() / r.mask.sum())

    channels = _synthesize_channels(config, rng, gland, voxel_grade)
    exam = Exam(
        exam_id=f"phantom_{seed:010d}",
        channels=channels,
        gland_mask=gland,
        regions=regions,
        voxel_spacing=config.voxel_spacing,
        cohort_stratum=achieved,
    )
    return exam, truth


def stratum_quotas(count: int, proportions) -> list:
    """Deterministic largest-remainder apportionment of exams to strata."""
    raw = [count * p for p in proportions]
    quotas = [int(np.floor(v)) for v in raw]
    short = count - sum(quotas)
    remainders = sorted(
        range(len(raw)), key=lambda i: (raw[i] - quotas[i], -i), reverse=True
    )
    for i in remainders[:short]:
        quotas[i] += 1
    return quotas


def generate_dataset(config: PhantomConfig, count: int, seed: int,
                     with_truth: bool = False):
    """Generate `count` exams hitting the configured strata proportions exactly
    (up to apportionment rounding); deterministic and byte-stable per seed."""
    quotas = stratum_quotas(count, config.stratum_proportions)
    targets = [s for s, q in enumerate(quotas) for _ in range(q)]
    order = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(seed), 0xA5]))
    ).permutation(count)
    exams = []
    truths = []
    for i in range(count):
        child_seed = np.random.SeedSequence([int(seed), 1, i]).generate_state(1)[0]
        target = targets[order[i]]
        exam, truth = generate_phantom_with_truth(config, int(child_seed), target)
        exam.exam_id = f"phantom_{seed:06d}_{i:04d}"
        exams.append(exam)
        truths.append(truth)
    return (exams, truths) if with_truth else exams
