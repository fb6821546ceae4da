"""Binary tensor container.

Layout (little-endian): magic ``G4DS``, u32 version, u64 tensor count, then
per tensor u16 name length, UTF-8 name, u8 dtype tag (0 = f32, 1 = f64),
u8 rank, u64 dims, raw data; finally a u32 CRC32 of every preceding byte.
"""

import logging
import struct
import zlib
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Union

import numpy as np

from src.utils.errors import (ChecksumError, FormatError, TruncatedFileError,
                              UnsupportedVersionError, WrongMagicError)

logger = logging.getLogger(__name__)

MAGIC = b"G4DS"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def encode_checkpoint(tensors: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array)
        if array.dtype not in TAGS:
            array = array.astype(np.float64)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"Tensor name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", TAGS[array.dtype], array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=DTYPES[TAGS[array.dtype]]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.raw) - 4:
            raise TruncatedFileError(what, expected=end + 4, actual=len(self.raw), offset=self.pos)
        chunk = self.raw[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(raw: bytes) -> "OrderedDict[str, np.ndarray]":
    """Parse and verify a checkpoint.

    Raises:
        WrongMagicError, UnsupportedVersionError, TruncatedFileError,
        ChecksumError, FormatError
    """
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise WrongMagicError(f"Not a checkpoint: magic {raw[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(raw) < 20:
        raise TruncatedFileError("checkpoint header", expected=20, actual=len(raw), offset=4)
    reader = _Reader(raw)
    reader.pos = 4
    version, count = reader.unpack("<IQ", "checkpoint header")
    if version != VERSION:
        raise UnsupportedVersionError(f"Checkpoint version {version} not supported (expected {VERSION})", offset=4)
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for index in range(count):
        (name_len,) = reader.unpack("<H", f"tensor {index} name length")
        name_offset = reader.pos
        try:
            name = reader.take(name_len, f"tensor {index} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"Tensor {index} name is not UTF-8: {str(e)}", offset=name_offset)
        tag_offset = reader.pos
        tag, rank = reader.unpack("<BB", f"tensor '{name}' dtype/rank")
        if tag not in DTYPES:
            raise FormatError(f"Tensor '{name}' has unknown dtype tag {tag}", offset=tag_offset)
        dims = reader.unpack(f"<{rank}Q", f"tensor '{name}' dims") if rank else ()
        dtype = DTYPES[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        data = reader.take(nbytes, f"tensor '{name}' data")
        tensors[name] = np.frombuffer(data, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    if reader.pos != len(raw) - 4:
        raise FormatError(f"{len(raw) - 4 - reader.pos} unexpected bytes before checksum", offset=reader.pos)
    (stored,) = struct.unpack("<I", raw[-4:])
    actual = zlib.crc32(raw[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise ChecksumError(f"CRC32 mismatch: stored {stored:08x}, computed {actual:08x}", offset=len(raw) - 4)
    return tensors


def save_checkpoint(path: Union[str, Path], tensors: Dict[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = encode_checkpoint(tensors)
    path.write_bytes(raw)
    logger.info(f"Saved checkpoint {path} ({len(tensors)} tensors, {len(raw)} bytes)")


def load_checkpoint(path: Union[str, Path]) -> "OrderedDict[str, np.ndarray]":
    return decode_checkpoint(Path(path).read_bytes())
