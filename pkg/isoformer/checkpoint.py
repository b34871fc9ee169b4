"""
Binary checkpoint format.

Layout, all integers little-endian::

    b"ISOF"  u32 version  u32 tensor_count
    per tensor: u16 name_length, UTF-8 name, u8 rank, rank x u64 dims,
                float32 payload
    u32 config_length, UTF-8 key=value config text

Loading rebuilds the model from the embedded config, then copies every
tensor in; any structural disagreement is a CorruptCheckpoint.
"""

import io
import logging
import math
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np
import torch

from .config.run_config import dump_config_text, load_model_config
from .exceptions import CorruptCheckpoint, InvalidConfig, IoFailure
from .models.config_models import IsoFormerConfig
from .network import IsoFormer

logger = logging.getLogger(__name__)

MAGIC = b"ISOF"
FORMAT_VERSION = 1


def _write_tensor(stream: BinaryIO, name: str, tensor: torch.Tensor) -> None:
    encoded = name.encode("utf-8")
    array = tensor.detach().cpu().to(torch.float32).numpy()
    stream.write(struct.pack("<H", len(encoded)))
    stream.write(encoded)
    stream.write(struct.pack("<B", array.ndim))
    stream.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    stream.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def serialize_model(model: IsoFormer) -> bytes:
    """Encode a model's state and config in the checkpoint layout."""
    state = model.state_dict()
    stream = io.BytesIO()
    stream.write(MAGIC)
    stream.write(struct.pack("<II", FORMAT_VERSION, len(state)))
    for name, tensor in state.items():
        _write_tensor(stream, name, tensor)
    config_text = dump_config_text(model.config).encode("utf-8")
    stream.write(struct.pack("<I", len(config_text)))
    stream.write(config_text)
    return stream.getvalue()


def save_checkpoint(model: IsoFormer, path: Union[str, Path]) -> None:
    """
    Write a model checkpoint.

    Raises:
        IoFailure: If the file cannot be written
    """
    payload = serialize_model(model)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"Cannot write checkpoint {path}: {exc}") from exc
    logger.info("Saved checkpoint %s (%d bytes)", path, len(payload))


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if size < 0:
            raise CorruptCheckpoint(f"{self.source}: negative length {size} at byte {self.offset}")
        if self.offset + size > len(self.data):
            raise CorruptCheckpoint(f"{self.source}: truncated at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize_model(data: bytes, source: str = "<checkpoint>") -> IsoFormer:
    """
    Rebuild a model from checkpoint bytes.

    Raises:
        CorruptCheckpoint: On bad magic or version, truncation, trailing
            bytes, an unreadable config, or tensors that do not match the
            model the config describes
    """
    reader = _Reader(data, source)
    if reader.take(4) != MAGIC:
        raise CorruptCheckpoint(f"{source}: bad magic bytes")
    version, count = reader.unpack("<II")
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"{source}: unsupported format version {version}")

    tensors: dict[str, torch.Tensor] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        try:
            name = reader.take(name_length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptCheckpoint(f"{source}: tensor name is not UTF-8") from exc
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}Q")
        numel = math.prod(shape)
        payload = reader.take(4 * numel)
        try:
            array = np.frombuffer(payload, dtype="<f4").reshape(shape)
        except ValueError as exc:
            raise CorruptCheckpoint(f"{source}: tensor {name} has unreadable shape {shape}: {exc}") from exc
        tensors[name] = torch.from_numpy(array.astype(np.float32))

    (config_length,) = reader.unpack("<I")
    try:
        config_text = reader.take(config_length).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptCheckpoint(f"{source}: config block is not UTF-8") from exc
    if reader.offset != len(data):
        raise CorruptCheckpoint(f"{source}: {len(data) - reader.offset} trailing bytes")

    try:
        config = load_model_config(config_text, IsoFormerConfig, source)
    except InvalidConfig as exc:
        raise CorruptCheckpoint(f"{source}: invalid config block: {exc}") from exc

    model = IsoFormer(config)
    expected = model.state_dict()
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        unexpected = sorted(set(tensors) - set(expected))
        raise CorruptCheckpoint(f"{source}: missing tensors {missing[:5]}, unexpected {unexpected[:5]}")
    for name, tensor in tensors.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise CorruptCheckpoint(
                f"{source}: {name} has shape {tuple(tensor.shape)}, expected {tuple(expected[name].shape)}"
            )
    model.load_state_dict(tensors)
    model.eval()
    return model


def load_checkpoint(path: Union[str, Path]) -> IsoFormer:
    """
    Read a model checkpoint.

    Raises:
        IoFailure: If the file cannot be read
        CorruptCheckpoint: If the contents are malformed
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"Cannot read checkpoint {path}: {exc}") from exc
    return deserialize_model(data, str(path))
