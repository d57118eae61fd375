"""Exam bundle on-disk format.

A bundle is a directory holding manifest.json plus one raw payload per
channel and mask. Channel payloads are little-endian float32, mask
payloads are 8-bit; bytes are ordered with x varying fastest, then y, then
z (declared per bundle by payload_axis_order, slowest axis first, so the
canonical order is ["z", "y", "x"]). Every payload carries a CRC32C in the
manifest and is verified on load. All manifest numbers are plain decimal
JSON values.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import kernels
from ..errors import ChecksumError, DataError, FormatVersionError
from .exam import CHANNEL_ROLES, Exam, RegionRecord, validate_exam

FORMAT_VERSION = 1

_CANONICAL_ORDER = ("z", "y", "x")  # slowest to fastest => x fastest


def _to_payload_array(volume: np.ndarray, dtype) -> np.ndarray:
    return np.ascontiguousarray(volume.transpose(2, 1, 0)).astype(dtype, copy=False)


def _write_payload(path: Path, volume: np.ndarray, dtype) -> int:
    raw = np.ascontiguousarray(_to_payload_array(volume, dtype)).tobytes()
    path.write_bytes(raw)
    return kernels.crc32c(raw)


def _read_payload(path: Path, shape_xyz, axis_order, dtype, crc: int, label: str) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"{label}: payload file {path.name} missing")
    raw = path.read_bytes()
    itemsize = np.dtype(dtype).itemsize
    expected = shape_xyz[0] * shape_xyz[1] * shape_xyz[2] * itemsize
    if len(raw) != expected:
        raise ChecksumError(
            f"{label}: payload {path.name} has {len(raw)} bytes, expected {expected}"
        )
    if kernels.crc32c(raw) != crc:
        raise ChecksumError(f"{label}: payload {path.name} failed CRC32C verification")
    sizes = {"x": shape_xyz[0], "y": shape_xyz[1], "z": shape_xyz[2]}
    arr = np.frombuffer(raw, dtype=dtype).reshape([sizes[a] for a in axis_order])
    # Reorder whatever the bundle declared back to canonical (x, y, z).
    perm = [axis_order.index(a) for a in ("x", "y", "z")]
    return np.ascontiguousarray(arr.transpose(perm))


def _axis_order(manifest) -> tuple:
    order = tuple(manifest.get("payload_axis_order", _CANONICAL_ORDER))
    if sorted(order) != ["x", "y", "z"]:
        raise DataError(f"manifest payload_axis_order {order!r} is not a permutation of x,y,z")
    return order


def save_exam(exam: Exam, path) -> None:
    """Write an exam bundle; save followed by load is the identity."""
    validate_exam(exam)
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    x, y, z = exam.shape
    manifest = {
        "format_version": FORMAT_VERSION,
        "exam_id": exam.exam_id,
        "shape": [int(x), int(y), int(z)],
        "payload_axis_order": list(_CANONICAL_ORDER),
        "voxel_spacing_mm": [float(s) for s in exam.voxel_spacing],
        "cohort_stratum": exam.cohort_stratum,
        "channels": [],
        "regions": [],
    }
    for i, role in enumerate(CHANNEL_ROLES):
        fname = f"channel_{role}.f32"
        crc = _write_payload(root / fname, exam.channels[i], "<f4")
        manifest["channels"].append({"role": role, "file": fname, "crc32c": crc})
    crc = _write_payload(root / "gland_mask.u8", exam.gland_mask.astype(np.uint8), "u1")
    manifest["gland_mask"] = {"file": "gland_mask.u8", "crc32c": crc}
    for r in exam.regions:
        fname = f"region_{r.region_id}.u8"
        crc = _write_payload(root / fname, r.mask.astype(np.uint8), "u1")
        manifest["regions"].append({
            "region_id": r.region_id,
            "kind": int(r.kind),
            "grade_group": None if r.grade_group is None else int(r.grade_group),
            "pirads": None if r.pirads is None else int(r.pirads),
            "file": fname,
            "crc32c": crc,
        })
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def load_exam(path) -> Exam:
    """Read and verify an exam bundle; raises DataError subtypes on any defect."""
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"no manifest.json under {root}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest.json is not valid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"bundle format version {version!r} unsupported (expected {FORMAT_VERSION})"
        )
    exam_id = manifest.get("exam_id", root.name)
    shape = tuple(manifest["shape"])
    if len(shape) != 3 or any(int(n) <= 0 for n in shape):
        raise DataError(f"{exam_id}: bad shape {shape} in manifest")
    order = _axis_order(manifest)
    spacing = tuple(float(s) for s in manifest.get("voxel_spacing_mm", (1.0, 1.0, 1.0)))

    entries = manifest.get("channels", [])
    roles = [c.get("role") for c in entries]
    if roles != list(CHANNEL_ROLES):
        raise DataError(f"{exam_id}: channel roles {roles} != {list(CHANNEL_ROLES)}")
    channels = np.empty((len(CHANNEL_ROLES),) + shape, dtype=np.float32)
    for i, entry in enumerate(entries):
        channels[i] = _read_payload(
            root / entry["file"], shape, order, "<f4", int(entry["crc32c"]),
            f"{exam_id}/{entry['role']}",
        )
    gentry = manifest["gland_mask"]
    gland = _read_payload(
        root / gentry["file"], shape, order, "u1", int(gentry["crc32c"]),
        f"{exam_id}/gland",
    ).astype(bool)
    regions = []
    for entry in manifest.get("regions", []):
        mask = _read_payload(
            root / entry["file"], shape, order, "u1", int(entry["crc32c"]),
            f"{exam_id}/{entry['region_id']}",
        ).astype(bool)
        regions.append(RegionRecord(
            region_id=entry["region_id"],
            mask=mask,
            kind=int(entry["kind"]),
            grade_group=None if entry.get("grade_group") is None else int(entry["grade_group"]),
            pirads=None if entry.get("pirads") is None else int(entry["pirads"]),
        ))
    exam = Exam(
        exam_id=exam_id,
        channels=channels,
        gland_mask=gland,
        regions=regions,
        voxel_spacing=spacing,
        cohort_stratum=manifest.get("cohort_stratum", ""),
    )
    validate_exam(exam)
    return exam


def save_volume_payload(path, volume: np.ndarray) -> int:
    """Write a standalone float32 volume in bundle payload layout."""
    return _write_payload(Path(path), np.asarray(volume, dtype=np.float32), "<f4")
