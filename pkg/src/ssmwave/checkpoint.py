"""Checkpoint container: magic, version, JSON manifest, raw float64 payload.

Layout: ``b"SSMC" | version u32 LE | manifest_len u64 LE | manifest UTF-8 |
payload``. The manifest carries the model configuration, the quantization
scheme, the rng algorithm id, and a tensor directory of name / shape /
dtype / byte offset / byte length; the payload concatenates every declared
tensor as little-endian float64 in directory order. Loading reproduces every
tensor bit for bit, and re-saving a loaded model reproduces the file bytes.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, MultiScaleModel, build_model
from .tensor import Rng
from .training import QuantSpec

__all__ = [
    "CheckpointError",
    "UnsupportedVersionError",
    "save_model",
    "load_model",
    "FORMAT_VERSION",
]

MAGIC = b"SSMC"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or inconsistent checkpoint file."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint format version not supported by this build."""


def save_model(model: MultiScaleModel, path, quant: QuantSpec = QuantSpec()):
    tensors = []
    payload = bytearray()
    for name, p in model.params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        tensors.append({
            "name": name,
            "shape": list(p.data.shape),
            "dtype": "float64",
            "offset": len(payload),
            "length": len(raw),
        })
        payload.extend(raw)
    manifest = {
        "model": dataclasses.asdict(model.cfg),
        "quant": {"scheme": quant.scheme, "bits": quant.bits, "mu": quant.mu},
        "rng_algorithm": Rng.ALGORITHM,
        "tensors": tensors,
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(bytes(payload))


def load_model(path) -> tuple[MultiScaleModel, QuantSpec]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
    (mlen,) = struct.unpack_from("<Q", data, 8)
    header_end = 16 + mlen
    try:
        manifest = json.loads(data[16:header_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc
    payload = data[header_end:]

    try:
        cfg = ModelConfig(**manifest["model"])
        q = manifest["quant"]
        quant = QuantSpec(scheme=q["scheme"], bits=q["bits"], mu=q["mu"])
        directory = manifest["tensors"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc

    model = build_model(cfg, Rng(0))
    seen = set()
    for entry in directory:
        name = entry["name"]
        if name not in model.params:
            raise CheckpointError(f"unknown tensor {name!r} in checkpoint")
        p = model.params[name]
        shape = tuple(entry["shape"])
        if shape != p.data.shape:
            raise CheckpointError(
                f"tensor {name!r} shape {shape} does not match model {p.data.shape}"
            )
        off, length = entry["offset"], entry["length"]
        if off + length > len(payload) or length != p.data.size * 8:
            raise CheckpointError(f"tensor {name!r} payload out of bounds")
        arr = np.frombuffer(payload, dtype="<f8", count=p.data.size, offset=off)
        p.data[...] = arr.reshape(shape)
        seen.add(name)
    missing = set(model.params) - seen
    if missing:
        raise CheckpointError(f"checkpoint missing tensors: {sorted(missing)}")
    model.refresh_frozen()
    return model, quant
