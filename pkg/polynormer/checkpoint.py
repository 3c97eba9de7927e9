"""
Binary checkpoint codec.

Layout (little-endian): magic b"PNCK", u32 version, u32 config length and
UTF-8 key=value config text (model config plus seed and selected stage),
u32 tensor count, then per tensor a u16 name length and UTF-8 name, u8
rank, u64 dims and float64 payload.
"""
from pathlib import Path
from typing import Dict, Union
import logging
import struct

import numpy as np

from .config import ModelConfig, Stage, parse_key_values
from .errors import CheckpointError
from .model import PolynormerModel, parameter_shapes

logger = logging.getLogger(__name__)

MAGIC = b"PNCK"
VERSION = 1


def encode_checkpoint(model: PolynormerModel) -> bytes:
    config_text = model.config.to_text() + f"\nseed={model.seed}\nstage={model.stage.value}"
    blob = config_text.encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(blob)), blob,
              struct.pack("<I", len(model.params))]
    for name, tensor in model.params.items():
        raw_name = name.encode("utf-8")
        arr = np.ascontiguousarray(tensor, dtype="<f8")
        chunks.append(struct.pack("<H", len(raw_name)) + raw_name)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int, tensor: str = None, what: str = "header") -> bytes:
        if self.pos + size > len(self.data):
            raise CheckpointError(f"truncated {what}", tensor=tensor)
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str, tensor: str = None, what: str = "header"):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), tensor, what))


def decode_checkpoint(data: bytes) -> PolynormerModel:
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CheckpointError("bad magic, not a checkpoint file")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}, expected {VERSION}")
    (config_len,) = reader.unpack("<I")
    raw_config = reader.take(config_len, what="config")
    try:
        pairs = parse_key_values(raw_config.decode("utf-8"))
        seed = int(pairs.pop("seed", "0"))
        stage = Stage(pairs.pop("stage", Stage.FULL.value))
        config = ModelConfig(**pairs)
    except ValueError as exc:
        raise CheckpointError(f"invalid embedded config: {exc}") from exc

    expected = parameter_shapes(config)
    (count,) = reader.unpack("<I")
    params: Dict[str, np.ndarray] = {}
    name = None
    for _ in range(count):
        (name_len,) = reader.unpack("<H", name, "tensor name")
        name = reader.take(name_len, name, "tensor name").decode("utf-8")
        if name not in expected:
            raise CheckpointError("unknown tensor", tensor=name)
        if name in params:
            raise CheckpointError("duplicate tensor", tensor=name)
        (rank,) = reader.unpack("<B", name, "tensor rank")
        shape = reader.unpack(f"<{rank}Q", name, "tensor dims")
        if tuple(shape) != expected[name]:
            raise CheckpointError(f"shape {tuple(shape)} does not match expected {expected[name]}",
                                  tensor=name)
        size = int(np.prod(shape)) * 8
        payload = reader.take(size, name, "tensor payload")
        params[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)

    missing = [k for k in expected if k not in params]
    if missing:
        raise CheckpointError("missing tensor", tensor=missing[0])
    if reader.pos != len(data):
        raise CheckpointError(f"{len(data) - reader.pos} trailing bytes after last tensor")
    ordered = {k: params[k] for k in expected}
    return PolynormerModel(config, ordered, seed, stage)


def save_checkpoint(model: PolynormerModel, path: Union[str, Path]) -> None:
    Path(path).write_bytes(encode_checkpoint(model))
    logger.info(f"Saved checkpoint with {len(model.params)} tensors to {path}")


def load_checkpoint(path: Union[str, Path]) -> PolynormerModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    model = decode_checkpoint(data)
    logger.info(f"Loaded checkpoint {path} ({model.parameter_count} parameters)")
    return model
