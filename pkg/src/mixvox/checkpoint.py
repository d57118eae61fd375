"""Checkpoint serialization.

Layout: 8-byte magic, little-endian uint32 header length, canonical JSON
header (format version, model config, optimizer step, metric history, blob
table with shapes and CRC32C values), then the raw little-endian float32
blobs in table order. Model parameters and Adam moments are all blobs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    CheckpointError,
    ChecksumError,
    FormatVersionError,
    IncompatibleCheckpointError,
)
from .model import GradeNet, ModelConfig

MAGIC = b"MXVXCKPT"
FORMAT_VERSION = 1


@dataclass
class OptimizerState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class CheckpointBundle:
    net: GradeNet
    optimizer: OptimizerState
    history: list
    config: ModelConfig


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(path, net: GradeNet, optimizer: OptimizerState | None = None,
                    history: list | None = None) -> None:
    optimizer = optimizer or OptimizerState()
    blobs = []
    arrays = []
    for name, p in net.params.items():
        blobs.append({"name": f"param.{name}", "shape": list(p.data.shape)})
        arrays.append(p.data)
    for kind, table in (("m", optimizer.m), ("v", optimizer.v)):
        for name in sorted(table):
            blobs.append({"name": f"adam.{kind}.{name}", "shape": list(table[name].shape)})
            arrays.append(table[name])
    payloads = []
    for entry, arr in zip(blobs, arrays):
        raw = np.ascontiguousarray(np.asarray(arr, dtype="<f4")).tobytes()
        entry["crc32c"] = kernels.crc32c(raw)
        payloads.append(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(net.config),
        "optimizer_step": int(optimizer.step),
        "history": history if history is not None else [],
        "blobs": blobs,
    }
    hdr = _canonical_json(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(hdr)).astype("<u4").tobytes())
        fh.write(hdr)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path, expect_num_bins: int | None = None,
                    dtype=None) -> CheckpointBundle:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    hdr_len = int(np.frombuffer(data[8:12], dtype="<u4")[0])
    if len(data) < 12 + hdr_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[12:12 + hdr_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatVersionError(
            f"{path}: format version {header.get('format_version')!r} unsupported"
        )
    config = ModelConfig(**header["config"])
    if expect_num_bins is not None and config.num_bins != expect_num_bins:
        raise IncompatibleCheckpointError(
            f"{path}: checkpoint has num_bins={config.num_bins}, "
            f"requested num_bins={expect_num_bins}"
        )
    net = GradeNet(config, dtype=dtype)
    optimizer = OptimizerState()
    offset = 12 + hdr_len
    for entry in header["blobs"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        raw = data[offset:offset + nbytes]
        if len(raw) != nbytes:
            raise ChecksumError(f"{path}: blob {entry['name']} truncated")
        if kernels.crc32c(raw) != entry["crc32c"]:
            raise ChecksumError(f"{path}: blob {entry['name']} failed CRC32C")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
        offset += nbytes
        name = entry["name"]
        if name.startswith("param."):
            pname = name[len("param."):]
            if pname not in net.params:
                raise CheckpointError(f"{path}: unknown parameter {pname!r}")
            net.params[pname].data = arr.astype(net.params[pname].data.dtype).copy()
        elif name.startswith("adam.m."):
            pname = name[len("adam.m."):]
            want = net.params[pname].data.dtype if pname in net.params else np.float32
            optimizer.m[pname] = arr.astype(want).copy()
        elif name.startswith("adam.v."):
            pname = name[len("adam.v."):]
            want = net.params[pname].data.dtype if pname in net.params else np.float32
            optimizer.v[pname] = arr.astype(want).copy()
        else:
            raise CheckpointError(f"{path}: unknown blob {name!r}")
    optimizer.step = int(header.get("optimizer_step", 0))
    return CheckpointBundle(net=net, optimizer=optimizer,
                            history=header.get("history", []), config=config)
