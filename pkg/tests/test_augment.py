import numpy as np

from mixvox.autodiff import seeded_rng
from mixvox.data.exam import validate_exam
from mixvox.data.phantom import PhantomConfig, generate_phantom
from mixvox.training.augment import AugmentConfig, apply_augment, flip_lr, translate


def test_flip_swaps_sextant_sides_and_stays_valid():
    exam = generate_phantom(PhantomConfig(), 5)
    flipped = flip_lr(exam)
    validate_exam(flipped)
    ids = {r.region_id for r in exam.regions}
    flipped_ids = {r.region_id for r in flipped.regions}
    assert ids == flipped_ids  # left_* <-> right_* swap preserves the set
    left = next(r for r in exam.regions if r.region_id == "left_apex")
    right_after = next(r for r in flipped.regions if r.region_id == "right_apex")
    assert np.array_equal(right_after.mask, left.mask[::-1])


def test_flip_is_involution():
    exam = generate_phantom(PhantomConfig(), 6)
    twice = flip_lr(flip_lr(exam))
    assert np.array_equal(twice.channels, exam.channels)
    for a, b in zip(exam.regions, twice.regions):
        assert np.array_equal(a.mask, b.mask)


def test_translate_preserves_mask_counts_and_validity():
    exam = generate_phantom(PhantomConfig(), 7)
    moved = translate(exam, (2, -1, 1))
    validate_exam(moved)
    assert moved.gland_mask.sum() == exam.gland_mask.sum()
    for a, b in zip(exam.regions, moved.regions):
        assert a.mask.sum() == b.mask.sum()


def test_translate_clamps_to_bounds():
    exam = generate_phantom(PhantomConfig(), 8)
    moved = translate(exam, (100, 100, 100))  # clamped to the safe margin
    validate_exam(moved)
    assert moved.gland_mask.sum() == exam.gland_mask.sum()


def test_apply_augment_deterministic_given_rng():
    exam = generate_phantom(PhantomConfig(), 9)
    cfg = AugmentConfig(flip_lr=True, max_shift=2)
    a = apply_augment(exam, cfg, seeded_rng(3))
    b = apply_augment(exam, cfg, seeded_rng(3))
    assert np.array_equal(a.channels, b.channels)


def test_disabled_augment_is_identity():
    exam = generate_phantom(PhantomConfig(), 10)
    out = apply_augment(exam, AugmentConfig(), seeded_rng(0))
    assert out is exam
