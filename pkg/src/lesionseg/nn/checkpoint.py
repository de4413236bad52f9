"""Binary checkpoint format.

Layout::

    b"LSN1" | u32 version | u64 header length | UTF-8 JSON header | float32 blocks

All integers and floats are little-endian. The header holds the network
config, the ordered tensor names and shapes, and training metadata; the
float32 blocks follow in header order.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

import numpy as np

from ..errors import CheckpointError, ShapeError
from .network import EncoderDecoder, NetworkConfig

MAGIC = b"LSN1"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


@dataclass
class ModelCheckpoint:
    config: NetworkConfig
    state: "OrderedDict[str, np.ndarray]"
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_network(cls, net: EncoderDecoder, **metadata: Any) -> "ModelCheckpoint":
        state = OrderedDict((k, np.array(v, dtype=np.float32)) for k, v in net.state().items())
        return cls(net.config, state, dict(metadata))

    def build_network(self, dtype=np.float32) -> EncoderDecoder:
        net = EncoderDecoder(self.config, dtype=dtype)
        net.load_state(self.state)
        return net

    def validate(self) -> None:
        reference = EncoderDecoder(self.config).state()
        if list(reference.keys()) != list(self.state.keys()):
            raise CheckpointError("tensor names/order do not match the network config")
        for k, v in reference.items():
            if tuple(self.state[k].shape) != v.shape:
                raise CheckpointError(
                    f"{k}: shape {tuple(self.state[k].shape)} inconsistent with config (expected {v.shape})"
                )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelCheckpoint):
            return NotImplemented
        return (
            self.config == other.config
            and self.metadata == other.metadata
            and list(self.state) == list(other.state)
            and all(
                a.shape == b.shape and a.tobytes() == b.tobytes()
                for a, b in zip(self.state.values(), other.state.values())
            )
        )


def to_bytes(ckpt: ModelCheckpoint) -> bytes:
    ckpt.validate()
    header = {
        "config": ckpt.config.to_dict(),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in ckpt.state.items()],
        "metadata": ckpt.metadata,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION, len(head)), head]
    for v in ckpt.state.values():
        parts.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    return b"".join(parts)


def from_bytes(data: bytes) -> ModelCheckpoint:
    if len(data) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint: missing prefix")
    magic, version, head_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    start = _PREFIX.size
    if len(data) < start + head_len:
        raise CheckpointError("truncated checkpoint: header incomplete")
    try:
        header = json.loads(data[start:start + head_len].decode("utf-8"))
        cfg = header["config"]
        config = NetworkConfig(
            in_channels=int(cfg["in_channels"]),
            stage_channels=tuple(cfg["stage_channels"]),
            bottleneck_channels=int(cfg["bottleneck_channels"]),
            dropout_prob=float(cfg["dropout_prob"]),
            skip_connections=bool(cfg["skip_connections"]),
        )
        tensors = header["tensors"]
        metadata = header.get("metadata", {})
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from exc
    pos = start + head_len
    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for t in tensors:
        shape = tuple(int(s) for s in t["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(data):
            raise CheckpointError(f"truncated checkpoint: tensor {t['name']} incomplete")
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape)
        state[t["name"]] = arr.astype(np.float32)
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"checkpoint has {len(data) - pos} trailing bytes")
    ckpt = ModelCheckpoint(config, state, metadata)
    try:
        ckpt.validate()
    except ShapeError as exc:
        raise CheckpointError(str(exc)) from exc
    return ckpt


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    path = Path(path)
    try:
        path.write_bytes(to_bytes(ckpt))
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot write checkpoint ({exc})") from exc


def load_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"{path}: no such checkpoint")
    try:
        return from_bytes(path.read_bytes())
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
