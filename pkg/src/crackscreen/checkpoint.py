"""Checkpoint container: magic bytes, JSON metadata, raw float32 tensor blobs.

Layout: ``ATXCKPT1`` | u64-LE metadata length | JSON metadata | blobs.
The metadata carries the format version, the architecture config, training
bookkeeping (epoch, metrics, seeds), and a tensor manifest of
name/shape/byte-offset entries; blobs follow in manifest order as raw
little-endian float32. Loading rebuilds the model from the stored config
and restores state bitwise.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arch import ArchConfig, Model

__all__ = ["MAGIC", "FORMAT_VERSION", "Checkpoint", "CheckpointFormatError",
           "save_checkpoint", "load_checkpoint", "read_metadata"]

MAGIC = b"ATXCKPT1"
FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ArchConfig
    model: Model
    epoch: int
    metrics: dict
    seed: int | None
    optimizer_state: dict | None     # name -> array pairs plus "t"


def _state_entries(model, optimizer_state):
    entries = list(model.state())
    if optimizer_state:
        for name, arr in optimizer_state.items():
            if name == "t":
                continue
            entries.append((f"opt.{name}", arr))
    return entries


def save_checkpoint(path, model, epoch=0, metrics=None, seed=None,
                    optimizer_state=None):
    """Serialize model (and optionally optimizer moments) to `path`."""
    entries = _state_entries(model, optimizer_state)
    manifest = []
    offset = 0
    blobs = []
    for name, arr in entries:
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape),
                         "offset": offset, "nbytes": arr32.nbytes})
        blobs.append(arr32.tobytes())
        offset += arr32.nbytes
    meta = {
        "format_version": FORMAT_VERSION,
        "arch": model.config.to_dict(),
        "epoch": int(epoch),
        "metrics": metrics or {},
        "seed": seed,
        "opt_t": int(optimizer_state["t"]) if optimizer_state else None,
        "manifest": manifest,
        "blob_bytes": offset,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(meta_bytes).to_bytes(8, "little"))
        fh.write(meta_bytes)
        for blob in blobs:
            fh.write(blob)
    return path


def read_metadata(path):
    """Parse and validate the header; raises CheckpointFormatError early."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint")
    meta_len = int.from_bytes(raw[len(MAGIC):len(MAGIC) + 8], "little")
    start = len(MAGIC) + 8
    if len(raw) < start + meta_len:
        raise CheckpointFormatError(f"{path}: truncated metadata")
    try:
        meta = json.loads(raw[start:start + meta_len])
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{path}: corrupt metadata: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"{path}: format version {meta.get('format_version')} != {FORMAT_VERSION}")
    body = raw[start + meta_len:]
    if len(body) != meta["blob_bytes"]:
        raise CheckpointFormatError(
            f"{path}: truncated blobs ({len(body)} bytes, expected {meta['blob_bytes']})")
    return meta, body


def load_checkpoint(path, expect_config=None, with_optimizer=False):
    """Rebuild the model from a checkpoint; bitwise state round trip."""
    meta, body = read_metadata(path)
    config = ArchConfig.from_dict(meta["arch"])
    if expect_config is not None and expect_config.to_dict() != config.to_dict():
        raise ValueError(f"{path}: checkpoint architecture {config.name!r} does not "
                         f"match expected {expect_config.name!r}")
    arrays = {}
    for entry in meta["manifest"]:
        off, nb = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(body[off:off + nb], dtype="<f4").reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
    model = Model(config, rng=np.random.default_rng(0))
    model.load_state({k: v for k, v in arrays.items() if not k.startswith("opt.")})
    optimizer_state = None
    if with_optimizer and meta.get("opt_t") is not None:
        optimizer_state = {k[len("opt."):]: v for k, v in arrays.items()
                           if k.startswith("opt.")}
        optimizer_state["t"] = meta["opt_t"]
    return Checkpoint(config, model, meta["epoch"], meta["metrics"],
                      meta.get("seed"), optimizer_state)
