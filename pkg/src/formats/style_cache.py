"""On-disk cache of per-style transforms.

A transform depends on the style image, the size it was resampled to, every
model parameter and the transform mode; the cache key hashes each of them.
Entries use the checkpoint container so they share its CRC check.
"""

import hashlib
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

from src.formats.checkpoint import load_checkpoint, save_checkpoint
from src.utils.errors import FormatError
from src.wct.transform import StyleTransform

SUFFIX = ".g4ds"


class StyleCache:
    """Directory of cached ``StyleTransform`` entries."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        self.logger = logging.getLogger(__name__)

    @staticmethod
    def key(style_bytes: bytes, model_digest: str, mode: str, size: Tuple[int, int]) -> str:
        """SHA-256 over the raw style bytes, the resampled (height, width), the model digest and the mode."""
        h = hashlib.sha256()
        h.update(style_bytes)
        h.update(f"{int(size[0])}x{int(size[1])}".encode("utf-8"))
        h.update(model_digest.encode("utf-8"))
        h.update(mode.encode("utf-8"))
        return h.hexdigest()

    def path(self, key: str) -> Path:
        return self.directory / f"{key}{SUFFIX}"

    def get(self, key: str) -> Optional[StyleTransform]:
        """Cached transform, or None on a miss.

        A corrupt entry is logged and treated as a miss.
        """
        path = self.path(key)
        if not path.exists():
            return None
        try:
            transform = StyleTransform.from_tensors(load_checkpoint(path))
        except (FormatError, KeyError) as e:
            self.logger.warning(f"Ignoring unreadable style cache entry {path}: {str(e)}")
            return None
        self.logger.debug(f"Style cache hit {key[:12]}")
        return transform

    def put(self, key: str, transform: StyleTransform):
        save_checkpoint(self.path(key), transform.to_tensors())
