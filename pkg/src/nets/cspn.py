import logging
from typing import Optional

import numpy as np

from src.nets import tape as T
from src.nets.layers import Conv2d, Module
from src.nets.tape import Parameter
from src.utils.errors import InvalidInputError

CENTER = 4
NEIGHBOR_SLOTS = np.array([0, 1, 2, 3, 5, 6, 7, 8])
CENTER_BIAS = 3.0


class CSPN(Module):
    """Guided spatial propagation with per-pixel 3x3 convex kernels.

    A small conv stack turns the guidance image into 9 logits per pixel. They
    are scaled by a learned temperature and pushed through a softmax; the 8
    neighbour weights are kept and the centre weight is 1 minus their sum.
    """

    def __init__(self, rng: np.random.Generator, iterations: int = 3, hidden: int = 16,
                 guidance_channels: int = 3):
        self.iterations = iterations
        self.conv1 = Conv2d(guidance_channels, hidden, rng, name="cspn.conv1")
        self.conv2 = Conv2d(hidden, 9, rng, name="cspn.conv2")
        self.conv2.weight.value *= 0.1
        self.conv2.bias.value[CENTER] = CENTER_BIAS
        self.log_tau = Parameter(np.zeros(1), name="cspn.log_tau")
        self.logger = logging.getLogger(__name__)

    def kernels(self, guidance):
        """Per-pixel kernel weights, H x W x 9, rows summing to 1."""
        logits = self.conv2(T.relu(self.conv1(guidance)))
        probs = T.softmax(T.mul(logits, T.exp(self.log_tau)), axis=-1)
        neighbors = T.getitem(probs, (slice(None), slice(None), NEIGHBOR_SLOTS))
        center = T.sub(1.0, T.tsum(neighbors, axis=-1, keepdims=True))
        parts = [
            T.getitem(neighbors, (slice(None), slice(None), slice(0, CENTER))),
            center,
            T.getitem(neighbors, (slice(None), slice(None), slice(CENTER, 8))),
        ]
        return T.concat(parts, axis=-1)

    def __call__(self, stylized, guidance, iterations: Optional[int] = None, kernels=None):
        return cspn_propagate(self, stylized, guidance, iterations, kernels)


def propagate_step(image, weights):
    """One round: out(p) = Σ_k w_k(p) · image(p + offset_k), edge replicated."""
    stacked = T.neighbors3x3(image)                          # H x W x 9 x C
    w = T.reshape(weights, weights.shape + (1,))
    return T.tsum(T.mul(stacked, w), axis=2)


def cspn_propagate(cspn: CSPN, stylized, guidance, iterations: Optional[int] = None, kernels=None):
    """Diffuse ``stylized`` with kernels predicted from ``guidance``.

    Args:
        cspn: the propagation network
        stylized: H x W x C image to filter
        guidance: H x W x 3 guidance image (whitened reconstruction)
        iterations: number of rounds, defaults to the network's K
        kernels: optional H x W x 9 override bypassing the guidance encoder
    """
    s_shape = stylized.shape
    if kernels is None:
        if guidance.shape[:2] != s_shape[:2]:
            raise InvalidInputError(f"Guidance shape {guidance.shape} does not match image shape {s_shape}")
        weights = cspn.kernels(guidance)
    else:
        weights = T.lift(kernels)
        if weights.shape != tuple(s_shape[:2]) + (9,):
            raise InvalidInputError(f"Kernel override must be H x W x 9, got {weights.shape}")
    k = cspn.iterations if iterations is None else iterations
    out = T.lift(stylized)
    for _ in range(k):
        out = propagate_step(out, weights)
    return out


def center_only_kernels(height: int, width: int) -> np.ndarray:
    kernels = np.zeros((height, width, 9))
    kernels[:, :, CENTER] = 1.0
    return kernels
