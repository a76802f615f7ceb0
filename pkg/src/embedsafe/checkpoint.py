"""Model checkpoints: JSON manifest + raw tensor blob in one file.

Layout: 4-byte magic "ESCK", u32 little-endian manifest length, the
manifest JSON (canonical form: sorted keys, compact separators), then the
concatenated tensor bytes. Tensors are row-major little-endian floats; no
pickled or otherwise executable payloads. Round-trips are byte-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .embedding import EmbedderArch, EmbeddingNet, embedder_param_shapes
from .errors import CheckpointError, MigrationError
from .generator import GeneratorNet, IdentityGenerator, UNetArch, unet_param_shapes

MAGIC = b"ESCK"
FORMAT_VERSION = 1

_DTYPE_TAGS = {"float32": "<f4", "float64": "<f8"}


@dataclass
class LoadedCheckpoint:
    model: object  # EmbeddingNet | GeneratorNet | IdentityGenerator
    manifest: dict


def _expected_shapes(kind: str, arch_dict: dict) -> tuple[object, dict]:
    if kind == "embedder":
        arch = EmbedderArch(
            input_hw=tuple(arch_dict["input_hw"]),
            input_channels=arch_dict["input_channels"],
            channels=tuple(arch_dict["channels"]),
            hidden=arch_dict["hidden"],
            embed_dim=arch_dict["embed_dim"],
            leaky_slope=arch_dict["leaky_slope"],
            norm_epsilon=arch_dict["norm_epsilon"],
        )
        return arch, embedder_param_shapes(arch)
    if kind == "generator":
        arch = UNetArch(
            input_hw=tuple(arch_dict["input_hw"]),
            input_channels=arch_dict["input_channels"],
            channels=tuple(arch_dict["channels"]),
            bottleneck=arch_dict["bottleneck"],
            leaky_slope=arch_dict["leaky_slope"],
        )
        return arch, unet_param_shapes(arch)
    if kind == "identity":
        return UNetArch(), {}
    raise CheckpointError(f"unknown model kind {kind!r}")


def save_checkpoint(model, path: str, config_echo: dict | None = None) -> None:
    """Serialize a model; `config_echo` is stored verbatim in the manifest."""
    tensors = []
    blob_parts = []
    offset = 0
    for name, arr in model.params.items():
        tag = _DTYPE_TAGS.get(arr.dtype.name)
        if tag is None:
            raise CheckpointError(f"tensor {name} has unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr.astype(tag, copy=False)).tobytes()
        tensors.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": tag,
                "offset": offset,
                "length": len(raw),
            }
        )
        blob_parts.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_kind": model.kind,
        "architecture": asdict(model.arch) if model.kind != "identity" else {},
        "tensors": tensors,
        "config": config_echo or {},
    }
    encoded = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(len(encoded).to_bytes(4, "little"))
        f.write(encoded)
        f.write(b"".join(blob_parts))
    os.replace(tmp, path)


def load_checkpoint(path: str) -> LoadedCheckpoint:
    """Parse, validate against the architecture descriptor, and rebuild."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    if len(data) < 8:
        raise CheckpointError(f"{path}: truncated header")
    mlen = int.from_bytes(data[4:8], "little")
    if len(data) < 8 + mlen:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[8 : 8 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise MigrationError(
            f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    blob = data[8 + mlen :]
    kind = manifest.get("model_kind")
    arch, expected = _expected_shapes(kind, manifest.get("architecture", {}))
    entries = manifest.get("tensors", [])
    if [e["name"] for e in entries] != list(expected):
        raise CheckpointError(f"{path}: tensor index does not match the architecture")
    params: dict[str, np.ndarray] = {}
    for e in entries:
        shape = tuple(e["shape"])
        if shape != expected[e["name"]]:
            raise CheckpointError(
                f"{path}: tensor {e['name']} shape {shape} != expected {expected[e['name']]}"
            )
        dt = np.dtype(e["dtype"])
        need = int(np.prod(shape)) * dt.itemsize
        if e["length"] != need:
            raise CheckpointError(f"{path}: tensor {e['name']} length mismatch")
        lo, hi = e["offset"], e["offset"] + e["length"]
        if lo < 0 or hi > len(blob):
            raise CheckpointError(f"{path}: tensor {e['name']} outside the blob")
        params[e["name"]] = (
            np.frombuffer(blob[lo:hi], dtype=dt).reshape(shape).astype(dt.base, copy=True)
        )
    if kind == "embedder":
        model: object = EmbeddingNet(arch, params)
    elif kind == "generator":
        model = GeneratorNet(arch, params)
    else:
        model = IdentityGenerator()
    return LoadedCheckpoint(model=model, manifest=manifest)
