"""Style image loading and optional PNG output (Pillow)."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np
from PIL import Image

from src.formats.ppm import read_ppm, to_bytes
from src.utils.errors import FormatError, InvalidInputError

logger = logging.getLogger(__name__)

STYLE_SIZE = 256
STYLE_SUFFIXES = (".ppm", ".png", ".jpg", ".jpeg")


@dataclass
class StyleImage:
    """A preprocessed style image plus the raw file bytes (cache key)."""

    name: str
    pixels: np.ndarray
    raw: bytes


def center_crop_resize(image: Image.Image, size: int = STYLE_SIZE) -> Image.Image:
    """Crop the largest centered square, then resize it to ``size`` x ``size``."""
    w, h = image.size
    side = min(w, h)
    left = (w - side) // 2
    top = (h - side) // 2
    square = image.crop((left, top, left + side, top + side))
    if side == size:
        return square
    return square.resize((size, size), Image.Resampling.BICUBIC)


def _open(path: Path) -> Image.Image:
    if path.suffix.lower() == ".ppm":
        return Image.fromarray(to_bytes(read_ppm(path)))
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (OSError, ValueError) as e:
        raise FormatError(f"Cannot decode image {path}: {str(e)}")


def load_style_image(path: Union[str, Path], size: int = STYLE_SIZE) -> StyleImage:
    """Read a PPM, PNG or JPEG style image as a ``size`` x ``size`` float image in [0, 1]."""
    path = Path(path)
    image = center_crop_resize(_open(path), size)
    pixels = np.asarray(image, dtype=np.float64) / 255.0
    logger.debug(f"Loaded style {path.name} -> {size}x{size}")
    return StyleImage(name=path.stem, pixels=pixels, raw=path.read_bytes())


def load_style_dir(directory: Union[str, Path], size: int = STYLE_SIZE) -> List[StyleImage]:
    """All style images of a directory, sorted by file name.

    Raises:
        InvalidInputError: the directory holds no supported image
    """
    directory = Path(directory)
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in STYLE_SUFFIXES)
    if not paths:
        raise InvalidInputError(f"No style images ({', '.join(STYLE_SUFFIXES)}) in {directory}")
    return [load_style_image(p, size) for p in paths]


def write_png(path: Union[str, Path], image: np.ndarray):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_bytes(image)).save(path, format="PNG")
    logger.debug(f"Wrote PNG {path}")
