"""Checkpoint container: versioned text header plus a raw little-endian weight blob.

File layout::

    THERMASK-CKPT v1\\n
    <header length in bytes, decimal>\\n
    <header: UTF-8 JSON>
    <blob: tensors concatenated, little-endian, C order>

The JSON header holds ``kind``, ``config``, ``metadata``, ``blob_sha256`` and a
``tensors`` table of ``{name, dtype, shape, offset, nbytes}`` entries with
offsets relative to the start of the blob.
"""

from __future__ import annotations

import hashlib
import json
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

MAGIC = b"THERMASK-CKPT"
VERSION = "v1"

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    state: "OrderedDict[str, np.ndarray]"
    metadata: dict = field(default_factory=dict)

    def to_model(self) -> nn.Module:
        from thermask.models.cae import CAEConfig, ClassifierConfig, ConvAutoencoder, EncoderClassifier
        from thermask.models.vit import SPTViT, ViTConfig

        if self.kind == "cae":
            model = ConvAutoencoder(CAEConfig(**self.config))
        elif self.kind == "classifier":
            model = EncoderClassifier(CAEConfig(**self.config["cae"]), ClassifierConfig(**self.config["classifier"]))
        elif self.kind == "vit":
            model = SPTViT(ViTConfig(**self.config))
        else:
            raise CheckpointError(f"unknown model kind {self.kind!r}")
        state = OrderedDict((k, torch.from_numpy(np.array(v))) for k, v in self.state.items())
        model.load_state_dict(state, strict=True)
        model.eval()
        return model


def checkpoint_from_model(model: nn.Module, metadata: dict | None = None) -> Checkpoint:
    state = OrderedDict((k, v.detach().cpu().numpy().copy()) for k, v in model.state_dict().items())
    return Checkpoint(model.kind, model.config_dict(), state, dict(metadata or {}))


def _encode(ckpt: Checkpoint) -> bytes:
    table, chunks, offset = [], [], 0
    for name, arr in ckpt.state.items():
        tensor = torch.from_numpy(np.ascontiguousarray(arr))
        if tensor.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {tensor.dtype} for {name}")
        dtype = _DTYPES[tensor.dtype]
        raw = np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tobytes()
        table.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    header = {
        "kind": ckpt.kind,
        "config": ckpt.config,
        "metadata": ckpt.metadata,
        "tensors": table,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + b" " + VERSION.encode() + b"\n" + str(len(header_bytes)).encode() + b"\n" + header_bytes + blob


def _decode(data: bytes, source: str) -> Checkpoint:
    try:
        first_nl = data.index(b"\n")
        second_nl = data.index(b"\n", first_nl + 1)
    except ValueError:
        raise CheckpointError(f"{source}: not a checkpoint file") from None
    magic_line = data[:first_nl].split(b" ")
    if len(magic_line) != 2 or magic_line[0] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file")
    version = magic_line[1].decode(errors="replace")
    if version != VERSION:
        raise CheckpointError(f"{source}: checkpoint version {version} unsupported (expected {VERSION})")
    try:
        header_len = int(data[first_nl + 1 : second_nl])
        header = json.loads(data[second_nl + 1 : second_nl + 1 + header_len])
    except (ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt header ({exc})") from None
    blob = data[second_nl + 1 + header_len :]
    if hashlib.sha256(blob).hexdigest() != header.get("blob_sha256"):
        raise CheckpointError(f"{source}: weight blob checksum mismatch (corrupt or truncated)")
    state = OrderedDict()
    for entry in header["tensors"]:
        raw = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        state[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return Checkpoint(header["kind"], header["config"], state, header.get("metadata", {}))


def save_checkpoint(model_or_ckpt, path, metadata: dict | None = None) -> Checkpoint:
    """Serialise atomically: write to a temp file in the same dir, then rename."""
    if isinstance(model_or_ckpt, Checkpoint):
        ckpt = model_or_ckpt
        if metadata:
            ckpt = Checkpoint(ckpt.kind, ckpt.config, ckpt.state, {**ckpt.metadata, **metadata})
    else:
        ckpt = checkpoint_from_model(model_or_ckpt, metadata)
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    try:
        tmp.write_bytes(_encode(ckpt))
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    return _decode(path.read_bytes(), str(path))


def checkpoint_id(path) -> str:
    """Content hash of a checkpoint file, used for provenance links."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
