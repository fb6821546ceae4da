import struct
from pathlib import Path
from typing import Union

import numpy as np

from src.scene.flow import FlowField
from src.utils.errors import TruncatedFileError, UnsupportedVersionError, WrongMagicError

MAGIC = b"G4DF"
VERSION = 1
HEADER = struct.Struct("<4sIII")
PIXEL = np.dtype([("dx", "<f4"), ("dy", "<f4"), ("mask", "u1")])


def encode_flow(field: FlowField) -> bytes:
    h, w = field.height, field.width
    records = np.zeros(h * w, dtype=PIXEL)
    records["dx"] = field.flow[..., 0].reshape(-1)
    records["dy"] = field.flow[..., 1].reshape(-1)
    records["mask"] = field.valid.reshape(-1).astype(np.uint8)
    return HEADER.pack(MAGIC, VERSION, w, h) + records.tobytes()


def decode_flow(raw: bytes) -> FlowField:
    if raw[:4] != MAGIC:
        raise WrongMagicError(f"Not a flow file: magic {raw[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(raw) < HEADER.size:
        raise TruncatedFileError("flow header", expected=HEADER.size, actual=len(raw), offset=4)
    _, version, w, h = HEADER.unpack_from(raw)
    if version != VERSION:
        raise UnsupportedVersionError(f"Flow version {version} not supported (expected {VERSION})", offset=4)
    expected = HEADER.size + w * h * PIXEL.itemsize
    if len(raw) < expected:
        raise TruncatedFileError("flow pixel data", expected=expected, actual=len(raw), offset=HEADER.size)
    records = np.frombuffer(raw, dtype=PIXEL, count=w * h, offset=HEADER.size)
    flow = np.stack([records["dx"], records["dy"]], axis=-1).astype(np.float64).reshape(h, w, 2)
    return FlowField(flow, records["mask"].reshape(h, w).astype(bool))


def write_flow(path: Union[str, Path], field: FlowField):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_flow(field))


def read_flow(path: Union[str, Path]) -> FlowField:
    return decode_flow(Path(path).read_bytes())
