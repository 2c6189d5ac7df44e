"""Versioned binary checkpoints.

Layout::

    b"RSLORA\\0\\0"            8 bytes magic
    uint32 LE                  format version
    uint32 LE                  header length in bytes
    header                     UTF-8 JSON (arrays, dtype, step, config digest, meta)
    payload                    little-endian float64 arrays, in header order

Every array named in the header is stored as raw row-major ``<f8``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..adapter import LoraAdapter
from ..sensitivity import SensitivityState

MAGIC = b"RSLORA\0\0"
FORMAT_VERSION = 2
DTYPE_TAG = "<f8"
_PREFIX = struct.Struct("<8sII")


class CheckpointError(Exception):
    code = 10


class CorruptCheckpointError(CheckpointError):
    code = 11


class VersionMismatchError(CheckpointError):
    code = 12


class ShapeMismatchError(CheckpointError):
    code = 13


@dataclass
class Checkpoint:
    arrays: Dict[str, np.ndarray]
    step: int = 0
    config_digest: str = ""
    meta: Dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def config_digest(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(path, ckpt: Checkpoint, version: int = FORMAT_VERSION) -> None:
    entries = []
    payload = []
    for name, arr in ckpt.arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeMismatchError(f"array {name!r} must be 2-D, got {arr.shape}")
        entries.append({"name": name, "shape": list(arr.shape)})
        payload.append(np.ascontiguousarray(arr, dtype=DTYPE_TAG).tobytes())
    header = {
        "dtype": DTYPE_TAG,
        "step": int(ckpt.step),
        "config_digest": ckpt.config_digest,
        "arrays": entries,
        "meta": ckpt.meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, version, len(hbytes)))
        f.write(hbytes)
        for chunk in payload:
            f.write(chunk)


def load_checkpoint(path, expected_version: int = FORMAT_VERSION) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CorruptCheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic {magic!r}")
    if version != expected_version:
        raise VersionMismatchError(
            f"{path}: checkpoint format v{version}, reader expects v{expected_version}"
        )
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
        entries = header["arrays"]
        dtype = header["dtype"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from exc
    if dtype != DTYPE_TAG:
        raise CorruptCheckpointError(f"{path}: unsupported dtype {dtype!r}")

    arrays = {}
    offset = start + hlen
    for entry in entries:
        shape = tuple(entry.get("shape", ()))
        if len(shape) != 2 or min(shape) < 1:
            raise ShapeMismatchError(f"{path}: array {entry.get('name')!r} has invalid shape {shape}")
        nbytes = shape[0] * shape[1] * 8
        if offset + nbytes > len(data):
            raise CorruptCheckpointError(f"{path}: payload truncated in array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(data, dtype=DTYPE_TAG, count=shape[0] * shape[1],
                                              offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(data):
        raise CorruptCheckpointError(f"{path}: {len(data) - offset} trailing bytes after payload")
    return Checkpoint(arrays, header.get("step", 0), header.get("config_digest", ""),
                      header.get("meta", {}), version)


# -- adapter sets <-> named arrays ------------------------------------------------

_ADAPTER_FIELDS = ("w0", "a", "b", "mask_a", "mask_b")


def pack_adapters(adapters: Sequence[LoraAdapter],
                  states: Optional[Sequence[SensitivityState]] = None) -> Dict[str, np.ndarray]:
    arrays = {}
    for i, ad in enumerate(adapters):
        for name in _ADAPTER_FIELDS:
            arrays[f"layer{i}.{name}"] = getattr(ad, name)
        if states is not None:
            arrays[f"layer{i}.ema_a"] = states[i].ema_a
            arrays[f"layer{i}.ema_b"] = states[i].ema_b
    return arrays


def unpack_adapters(ckpt: Checkpoint) -> Tuple[List[LoraAdapter], Optional[List[SensitivityState]]]:
    adapters, states = [], []
    i = 0
    while f"layer{i}.w0" in ckpt.arrays:
        try:
            parts = {name: ckpt.arrays[f"layer{i}.{name}"] for name in _ADAPTER_FIELDS}
        except KeyError as exc:
            raise CorruptCheckpointError(f"layer {i} is missing {exc}") from exc
        try:
            adapters.append(LoraAdapter(**parts))
        except ValueError as exc:
            raise ShapeMismatchError(f"layer {i}: {exc}") from exc
        if f"layer{i}.ema_a" in ckpt.arrays:
            beta = float(ckpt.meta.get("beta", 0.8))
            steps_seen = int(ckpt.meta.get("steps_seen", [0] * (i + 1))[i])
            ema_a, ema_b = ckpt.arrays[f"layer{i}.ema_a"], ckpt.arrays[f"layer{i}.ema_b"]
            if ema_a.shape != parts["a"].shape or ema_b.shape != parts["b"].shape:
                raise ShapeMismatchError(f"layer {i}: sensitivity shapes do not match factors")
            states.append(SensitivityState(ema_a, ema_b, beta, steps_seen))
        i += 1
    if not adapters:
        raise CorruptCheckpointError("checkpoint holds no adapter layers")
    return adapters, (states if len(states) == len(adapters) else None)


def pack_base(weights: Sequence[np.ndarray]) -> Dict[str, np.ndarray]:
    return {f"base{i}": w for i, w in enumerate(weights)}


def unpack_base(ckpt: Checkpoint) -> List[np.ndarray]:
    out = []
    while f"base{len(out)}" in ckpt.arrays:
        out.append(ckpt.arrays[f"base{len(out)}"])
    if not out:
        raise CorruptCheckpointError("checkpoint holds no base weights")
    return out
