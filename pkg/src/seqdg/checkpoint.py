"""Versioned binary checkpoints.

Layout: an 8-byte magic, a little-endian uint32 format version, a
little-endian uint64 header length, a UTF-8 JSON header, then the raw
parameter payload as little-endian float64 arrays back to back. The
header lists parameters sorted by name with shapes and payload offsets,
plus a config echo and an optional RNG state, so saving what was loaded
reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from seqdg.model import ModelConfig, ModelParams, SeqDGModel

__all__ = [
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "load_model",
    "strip_text_parameters",
]

MAGIC = b"SEQDGCKP"
VERSION = 1


class CheckpointError(Exception):
    """Unreadable or inconsistent checkpoint file."""


def save_checkpoint(path, params: ModelParams, *, rng_state: dict | None = None,
                    extra: dict | None = None) -> Path:
    """Write config, named parameters, and RNG state. Deterministic: the
    same contents always produce the same bytes."""
    named = params.named()
    entries = []
    offset = 0
    payload = []
    for name in sorted(named):
        arr = np.ascontiguousarray(named[name].data, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "size": int(arr.size)})
        payload.append(arr.tobytes())
        offset += arr.size * 8
    header = {
        "config": params.config.to_dict(),
        "params": entries,
        "rng_state": rng_state,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for chunk in payload:
            fh.write(chunk)
    return path


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Read a checkpoint back into ModelParams plus its header metadata."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = struct.unpack("<I", raw[8:12])[0]
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header_len = struct.unpack("<Q", raw[12:20])[0]
    header = json.loads(raw[20:20 + header_len].decode("utf-8"))
    body = raw[20 + header_len:]
    arrays = {}
    for entry in header["params"]:
        start = entry["offset"]
        count = entry["size"]
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    config = ModelConfig.from_dict(header["config"])
    try:
        params = ModelParams.from_named(config, arrays)
    except KeyError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return params, header


def load_model(path) -> SeqDGModel:
    params, _ = load_checkpoint(path)
    return SeqDGModel(params.config, params)


def strip_text_parameters(src_path, dst_path) -> Path:
    """Copy a checkpoint without any text-side parameters (the text
    decoder stack and the text output head). Predictions from the
    stripped model are bitwise identical: inference never reads them."""
    params, header = load_checkpoint(src_path)
    params.dec_text = None
    params.text_head = None
    return save_checkpoint(dst_path, params, rng_state=header.get("rng_state"),
                           extra=header.get("extra"))
