"""Checkpoint persistence.

File layout, all little-endian:

    bytes 0..7    magic b"SWATCKPT"
    bytes 8..11   format version, u32
    bytes 12..15  header length H, u32
    bytes 16..16+H  header, one UTF-8 JSON document
    rest          payload, concatenated float32 parameter arrays

The header carries the model config, seed, head ordering, and a parameter
manifest (name, shape, byte offset, byte length) sorted by name; offsets are
non-overlapping and cover the payload exactly. Training keeps parameters in
f64; storage is f32, so save -> load -> save is byte-identical and a loaded
model's logits equal the f32-rounded original's bit for bit.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, IntegrityError
from .model import Model, ModelConfig, build_model, parameter_count
from .tensor import Tensor

MAGIC = b"SWATCKPT"
FORMAT_VERSION = 1
HEAD_ORDER = "negative-half-first"


def _header_dict(model: Model) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    arrays = [(name, t.data.astype("<f4")) for name, t in sorted(model.params.items())]
    manifest = []
    offset = 0
    for name, arr in arrays:
        manifest.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes}
        )
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "config": dataclasses.asdict(model.cfg),
        "seed": model.cfg.seed,
        "head_order": HEAD_ORDER,
        "param_count": parameter_count(model.cfg),
        "payload_nbytes": offset,
        "nonstandard_pos_mode": model.cfg.pos_mode == "none",
        "manifest": manifest,
    }
    return header, arrays


def serialize_checkpoint(model: Model) -> bytes:
    header, arrays = _header_dict(model)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header_bytes)), header_bytes]
    parts.extend(arr.tobytes() for _, arr in arrays)
    return b"".join(parts)


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(serialize_checkpoint(model))


def model_content_hash(model: Model) -> str:
    """Content hash of the model as persisted (config + f32 parameters)."""
    return hashlib.sha256(serialize_checkpoint(model)).hexdigest()


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> Model:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint (bad magic)")
    version, header_len = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise IntegrityError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(raw) < 16 + header_len:
        raise IntegrityError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IntegrityError(f"{path}: unreadable header: {e}") from e

    try:
        cfg = ModelConfig(**header["config"])
    except (TypeError, KeyError) as e:
        raise IntegrityError(f"{path}: bad config in header: {e}") from e
    if expect_config is not None and cfg != expect_config:
        raise ConfigError(
            f"checkpoint config does not match the requested config: {cfg} vs {expect_config}"
        )

    payload = raw[16 + header_len :]
    manifest = header.get("manifest", [])
    expected = 0
    for entry in manifest:
        if entry["offset"] != expected:
            raise IntegrityError(f"{path}: manifest offsets must be contiguous from 0")
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        if count * 4 != entry["nbytes"]:
            raise IntegrityError(f"{path}: manifest nbytes disagree with shape for {entry['name']}")
        expected += entry["nbytes"]
    if expected != len(payload) or expected != header.get("payload_nbytes", expected):
        raise IntegrityError(
            f"{path}: payload is {len(payload)} bytes, manifest covers {expected}"
        )

    model = build_model(cfg)
    if sorted(e["name"] for e in manifest) != sorted(model.params):
        raise IntegrityError(f"{path}: manifest names do not match the architecture")
    for entry in manifest:
        t = model.params[entry["name"]]
        if list(t.shape) != entry["shape"]:
            raise IntegrityError(
                f"{path}: shape mismatch for {entry['name']}: "
                f"{entry['shape']} stored, {list(t.shape)} expected"
            )
        arr = np.frombuffer(
            payload, dtype="<f4", count=entry["nbytes"] // 4, offset=entry["offset"]
        )
        model.params[entry["name"]] = Tensor(
            arr.astype(np.float64).reshape(entry["shape"]), requires_grad=True
        )
    return model
