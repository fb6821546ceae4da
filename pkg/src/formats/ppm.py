"""Netpbm color images (P6 written, P6 and P3 read)."""

import logging
import re
from pathlib import Path
from typing import Union

import numpy as np

from src.utils.errors import FormatError, TruncatedFileError, WrongMagicError

logger = logging.getLogger(__name__)

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Float image in [0, 1] to uint8 (values are clamped first)."""
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(image: np.ndarray) -> bytes:
    data = image if image.dtype == np.uint8 else to_bytes(image)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError(f"PPM images must be H x W x 3, got shape {data.shape}")
    h, w, _ = data.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(data).tobytes()


def write_ppm(path: Union[str, Path], image: np.ndarray):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ppm(image))
    logger.debug(f"Wrote PPM {path}")


def decode_ppm(raw: bytes) -> np.ndarray:
    """Decode P6/P3 bytes to a float image in [0, 1].

    Images with maxval other than 255 are rescaled to 8-bit levels with
    round(v * 255 / maxval) and a warning.
    """
    pos = 0
    tokens = []
    while len(tokens) < 4:
        match = _TOKEN.match(raw, pos)
        if match is None:
            raise TruncatedFileError("PPM header", expected=pos + 1, actual=len(raw), offset=pos)
        tokens.append((match.group(1), match.start(1)))
        pos = match.end(1)
    magic, _ = tokens[0]
    if magic not in (b"P6", b"P3"):
        raise WrongMagicError(f"Not a PPM file: magic {magic!r}", offset=0)
    try:
        width, height, maxval = (int(tok) for tok, _ in tokens[1:])
    except ValueError as e:
        raise FormatError(f"Bad PPM header field: {str(e)}", offset=tokens[1][1])
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"Bad PPM header: width={width} height={height} maxval={maxval}", offset=tokens[1][1])
    count = width * height * 3
    if magic == b"P6":
        pos += 1
        itemsize = 1 if maxval < 256 else 2
        expected = pos + count * itemsize
        if len(raw) < expected:
            raise TruncatedFileError("PPM pixel data", expected=expected, actual=len(raw), offset=pos)
        dtype = np.uint8 if itemsize == 1 else np.dtype(">u2")
        values = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).astype(np.int64)
    else:
        body = raw[pos:].split()
        if len(body) < count:
            raise TruncatedFileError("P3 pixel values", expected=count, actual=len(body), offset=pos)
        values = np.array([int(v) for v in body[:count]], dtype=np.int64)
    if maxval != 255:
        logger.warning(f"PPM maxval {maxval} != 255, rescaling to 8-bit")
        values = np.floor(values * 255.0 / maxval + 0.5).astype(np.int64)
    return values.reshape(height, width, 3).astype(np.float64) / 255.0


def read_ppm(path: Union[str, Path]) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())
