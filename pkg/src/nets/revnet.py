"""Reversible feature network built from additive coupling blocks."""

import logging
from typing import List

import numpy as np

from src.nets import tape as T
from src.nets.layers import Conv2d, Module
from src.utils.errors import InvalidInputError

FEATURE_CHANNELS = 32
IMAGE_CHANNELS = 3
PARTITION_SEED = 0xC0FFEE


class CouplingBlock(Module):
    """y_b = x_b + g(x_a), y_a = x_a, channels kept in place.

    ``a_idx``/``b_idx`` split the channels in two halves. With a zero last
    conv the block is exactly the identity.
    """

    def __init__(self, a_idx: np.ndarray, b_idx: np.ndarray, rng: np.random.Generator,
                 hidden: int = FEATURE_CHANNELS, name: str = "block"):
        self._a = np.asarray(a_idx)
        self._b = np.asarray(b_idx)
        self._inverse_order = np.argsort(np.concatenate([self._a, self._b]))
        half = len(self._a)
        self.conv1 = Conv2d(half, hidden, rng, name=f"{name}.conv1")
        self.conv2 = Conv2d(hidden, len(self._b), rng, zero_init=True, name=f"{name}.conv2")

    def _shift(self, xa):
        return self.conv2(T.relu(self.conv1(xa)))

    def forward(self, x):
        xa = T.getitem(x, (slice(None), slice(None), self._a))
        xb = T.getitem(x, (slice(None), slice(None), self._b))
        yb = T.add(xb, self._shift(xa))
        out = T.concat([xa, yb], axis=2)
        return T.getitem(out, (slice(None), slice(None), self._inverse_order))

    def inverse(self, y):
        ya = T.getitem(y, (slice(None), slice(None), self._a))
        yb = T.getitem(y, (slice(None), slice(None), self._b))
        xb = T.sub(yb, self._shift(ya))
        out = T.concat([ya, xb], axis=2)
        return T.getitem(out, (slice(None), slice(None), self._inverse_order))


class RevNet(Module):
    """Bijective map between images lifted to 32 channels and feature maps.

    Blocks come in pairs sharing one random channel partition; the second
    block of a pair updates the half the first one conditioned on.
    """

    def __init__(self, rng: np.random.Generator, n_blocks: int = 8, channels: int = FEATURE_CHANNELS):
        if n_blocks % 2:
            raise ValueError(f"n_blocks must be even, got {n_blocks}")
        self.channels = channels
        partition_rng = np.random.default_rng(PARTITION_SEED)
        blocks: List[CouplingBlock] = []
        half = channels // 2
        for pair in range(n_blocks // 2):
            perm = partition_rng.permutation(channels)
            a, b = np.sort(perm[:half]), np.sort(perm[half:])
            blocks.append(CouplingBlock(a, b, rng, name=f"revnet.{2 * pair}"))
            blocks.append(CouplingBlock(b, a, rng, name=f"revnet.{2 * pair + 1}"))
        self.blocks = blocks
        self.logger = logging.getLogger(__name__)

    def randomize(self, rng: np.random.Generator, scale: float = 0.1):
        """Overwrite every weight with Gaussian noise (bijectivity checks)."""
        for p in self.parameters():
            p.value = (rng.standard_normal(p.shape) * scale).astype(p.dtype)

    def lift(self, image):
        image = T.lift(image)
        h, w, c = image.shape
        pad = np.zeros((h, w, self.channels - c), dtype=image.dtype)
        return T.concat([image, pad], axis=2)

    def forward_features(self, z):
        h = T.lift(z)
        for block in self.blocks:
            h = block.forward(h)
        return h

    def inverse_features(self, y):
        h = T.lift(y)
        for block in reversed(self.blocks):
            h = block.inverse(h)
        return h


def rev_forward(revnet: RevNet, image):
    """Image H x W x 3 to features H x W x 32 (zero-pad, then couple).

    Raises:
        InvalidInputError: wrong channel count or non-finite pixels
    """
    value = image.value if isinstance(image, T.Tensor) else np.asarray(image)
    if value.ndim != 3 or value.shape[2] != IMAGE_CHANNELS:
        raise InvalidInputError(f"rev_forward expects an H x W x 3 image, got shape {value.shape}")
    if not np.all(np.isfinite(value)):
        raise InvalidInputError("rev_forward input contains non-finite values")
    return revnet.forward_features(revnet.lift(image))


def rev_inverse(revnet: RevNet, features):
    """Features H x W x 32 to an unclamped H x W x 3 image."""
    full = revnet.inverse_features(features)
    return T.getitem(full, (slice(None), slice(None), slice(0, IMAGE_CHANNELS)))


def to_display(image) -> np.ndarray:
    """Clamp to [0, 1] for emission; never used inside losses."""
    value = image.value if isinstance(image, T.Tensor) else np.asarray(image)
    return np.clip(value, 0.0, 1.0)
