"""Region geometry: sextant partition of the gland and lesion boxes.

The sextant rule is deterministic: split laterally at the midpoint of the
gland's tight bounding box and into axial thirds by equal z-extent of the
bounding box, with voxels exactly on a cut assigned to the lower-index
side. Masks are intersected with the gland so the six sextants always tile
it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, LayoutError, ShapeError

SIDE_LABELS = ("left", "right")
ZONE_LABELS = ("apex", "mid", "base")
SEXTANT_LABELS = tuple(f"{s}_{z}" for s in SIDE_LABELS for z in ZONE_LABELS)

LESION_KIND = 1
SEXTANT_KIND = 2


@dataclass
class SextantLayout:
    lateral_split: int          # first x index belonging to the right side
    axial_cuts: tuple[int, int]  # first z index of mid, first z index of base
    labels: tuple[str, ...] = SEXTANT_LABELS


def compute_sextants(gland_mask: np.ndarray):
    """Partition the gland into six labelled masks.

    Returns (masks, layout) where masks maps label -> bool array. Union of
    the masks equals the gland and they are pairwise disjoint.
    """
    gland = np.asarray(gland_mask, dtype=bool)
    if gland.ndim != 3:
        raise ShapeError(f"gland mask must be 3-D, got shape {gland.shape}")
    if not gland.any():
        raise DataError("gland mask is empty")
    xs, ys, zs = np.nonzero(gland)
    x0, x1 = xs.min(), xs.max()
    z0, z1 = zs.min(), zs.max()
    lz = z1 - z0 + 1
    if lz < 3:
        raise LayoutError(f"gland z-extent {lz} < 3 voxels; cannot form axial thirds")
    lx = x1 - x0 + 1

    xi = np.arange(gland.shape[0])
    zi = np.arange(gland.shape[2])
    side_of_x = np.minimum(1, ((xi - x0) * 2) // max(lx, 1)).clip(0, 1)
    zone_of_z = np.minimum(2, ((zi - z0) * 3) // lz).clip(0, 2)

    masks = {}
    for si, side in enumerate(SIDE_LABELS):
        for zj, zone in enumerate(ZONE_LABELS):
            m = gland & (side_of_x[:, None, None] == si) & (zone_of_z[None, None, :] == zj)
            masks[f"{side}_{zone}"] = m
    layout = SextantLayout(
        lateral_split=int(x0 + (lx + 1) // 2),
        axial_cuts=(int(z0 + (lz + 2) // 3), int(z0 + (2 * lz + 2) // 3)),
    )
    return masks, layout


@dataclass
class LesionBox:
    """Per-slice axial bounds over a contiguous z range (all inclusive)."""

    z_start: int
    slice_bounds: list  # [(x0, x1, y0, y1)] one per slice, inclusive

    def to_mask(self, shape) -> np.ndarray:
        if not self.slice_bounds:
            raise DataError("lesion box has an empty z-range")
        mask = np.zeros(shape, dtype=bool)
        for i, (bx0, bx1, by0, by1) in enumerate(self.slice_bounds):
            z = self.z_start + i
            if not (0 <= z < shape[2]):
                raise DataError(f"lesion box slice z={z} outside volume depth {shape[2]}")
            if bx0 > bx1 or by0 > by1:
                raise DataError(f"lesion box has inverted bounds on slice z={z}")
            if bx0 < 0 or by0 < 0 or bx1 >= shape[0] or by1 >= shape[1]:
                raise DataError(f"lesion box bounds outside volume extent on slice z={z}")
            mask[bx0:bx1 + 1, by0:by1 + 1, z] = True
        return mask


def lesion_box_mask(shape, box: LesionBox) -> np.ndarray:
    return box.to_mask(shape)


@dataclass
class RegionSpec:
    """Input to build_region_set: a labelled mask with its pathology."""

    region_id: str
    mask: np.ndarray
    kind: int
    grade_group: int | None = None
    pirads: int | None = None


def build_region_set(lesions: list[RegionSpec], sextants: list[RegionSpec]):
    """Assemble the per-exam region list and the lesion segmentation target.

    The segmentation target is the voxel-wise max (union) of the lesion
    masks; sextant masks do not contribute to it.
    """
    regions = list(lesions) + list(sextants)
    seen = set()
    for r in regions:
        if r.region_id in seen:
            raise DataError(f"duplicate region_id {r.region_id!r}")
        seen.add(r.region_id)
    for r in lesions:
        if r.kind != LESION_KIND:
            raise DataError(f"lesion {r.region_id!r} must have kind {LESION_KIND}")
    for r in sextants:
        if r.kind != SEXTANT_KIND:
            raise DataError(f"sextant {r.region_id!r} must have kind {SEXTANT_KIND}")
    if regions:
        shape = regions[0].mask.shape
    else:
        raise DataError("no regions given")
    y_seg = np.zeros(shape, dtype=bool)
    for r in lesions:
        if r.mask.shape != shape:
            raise ShapeError(f"region {r.region_id!r} mask shape {r.mask.shape} vs {shape}")
        y_seg |= r.mask.astype(bool)
    return regions, y_seg
