"""Frozen multi-scale convolutional encoder used by the art, propagation and
feature-distance losses."""

import hashlib
from typing import List, Sequence

import numpy as np

from src.nets import tape as T
from src.nets.layers import Conv2d, Module

ENCODER_SEED = 0x5EED
ENCODER_WIDTHS = (16, 32, 64)


class FrozenEncoder(Module):
    """Three stride-2 conv + ReLU stages with fixed-seed weights.

    Weights are drawn once from ``ENCODER_SEED`` and never train; they are
    not part of checkpoints because they can always be rebuilt.
    """

    def __init__(self, widths: Sequence[int] = ENCODER_WIDTHS, in_channels: int = 3, dtype=np.float64):
        rng = np.random.default_rng(ENCODER_SEED)
        stages = []
        c_in = in_channels
        for i, width in enumerate(widths):
            stages.append(Conv2d(c_in, width, rng, kernel=3, stride=2, padding=1, name=f"encoder.{i}"))
            c_in = width
        self.stages = stages
        self.astype(dtype)
        self.freeze()

    def __call__(self, image) -> List[T.Tensor]:
        maps = []
        h = T.lift(image)
        for stage in self.stages:
            h = T.relu(stage(h))
            maps.append(h)
        return maps

    def fingerprint(self) -> str:
        """SHA-256 over all weights in parameter order."""
        digest = hashlib.sha256()
        for name, p in self.named_parameters():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
        return digest.hexdigest()
