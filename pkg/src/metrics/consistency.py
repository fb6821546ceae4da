"""Flow-based warping and the consistency metrics built on it."""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import map_coordinates

from src.nets.encoder import FrozenEncoder
from src.scene.flow import FlowField
from src.utils.errors import EmptyValidSetError, InvalidInputError

logger = logging.getLogger(__name__)

NORM_EPS = 1e-10


def warp(image: np.ndarray, flow: FlowField) -> Tuple[np.ndarray, np.ndarray]:
    """Backward-warp ``image`` onto the grid of ``flow``.

    ``warped[y, x] = image[y + dy, x + dx]`` with bilinear interpolation.
    Samples falling outside the frame, or at pixels the flow marks invalid,
    are masked out (and set to zero).

    Raises:
        InvalidInputError: flow and image sizes differ
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if (flow.height, flow.width) != (h, w):
        raise InvalidInputError(f"Flow is {flow.width}x{flow.height} but the image is {w}x{h}")
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    src_x = cols + flow.flow[..., 0]
    src_y = rows + flow.flow[..., 1]
    mask = flow.valid & (src_x >= 0) & (src_x <= w - 1) & (src_y >= 0) & (src_y <= h - 1)
    coords = np.stack([np.where(mask, src_y, 0.0), np.where(mask, src_x, 0.0)])
    channels = image[..., None] if image.ndim == 2 else image
    warped = np.stack(
        [map_coordinates(channels[..., c], coords, order=1, mode="nearest") for c in range(channels.shape[2])],
        axis=-1,
    )
    warped = np.where(mask[..., None], warped, 0.0)
    return (warped[..., 0] if image.ndim == 2 else warped), mask


def consistency_rmse(stylized_a: np.ndarray, stylized_b: np.ndarray, flow_ab: FlowField) -> float:
    """RMSE over valid pixels between ``a`` warped into ``b`` and ``b``.

    ``flow_ab`` lives on ``b``'s grid and points into ``a``. Both images are
    clipped to [0, 1] first.

    Raises:
        EmptyValidSetError: no pixel survives masking
    """
    a = np.clip(np.asarray(stylized_a, dtype=np.float64), 0.0, 1.0)
    b = np.clip(np.asarray(stylized_b, dtype=np.float64), 0.0, 1.0)
    warped, mask = warp(a, flow_ab)
    if not mask.any():
        raise EmptyValidSetError("No valid pixels after warping; cannot compute consistency RMSE")
    diff = warped[mask] - b[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def _unit(feature: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.sum(feature * feature, axis=-1, keepdims=True))
    return feature / np.maximum(norm, NORM_EPS)


def feature_distance(image_a: np.ndarray, image_b: np.ndarray, encoder: FrozenEncoder) -> float:
    """Mean squared distance of per-pixel unit-normalized encoder features, averaged over stages."""
    maps_a = encoder(np.asarray(image_a, dtype=np.float64))
    maps_b = encoder(np.asarray(image_b, dtype=np.float64))
    distances = []
    for fa, fb in zip(maps_a, maps_b):
        diff = _unit(fa.value) - _unit(fb.value)
        distances.append(np.mean(np.sum(diff * diff, axis=-1)))
    return float(np.mean(distances))


def feat_dist(stylized_a: np.ndarray, stylized_b: np.ndarray, flow_ab: FlowField,
              encoder: Optional[FrozenEncoder] = None) -> float:
    """Feature distance between ``a`` warped into ``b`` and ``b``.

    Masked pixels take ``b``'s values so they contribute nothing but keep the
    encoder's receptive fields intact.

    Raises:
        EmptyValidSetError: no pixel survives masking
    """
    a = np.clip(np.asarray(stylized_a, dtype=np.float64), 0.0, 1.0)
    b = np.clip(np.asarray(stylized_b, dtype=np.float64), 0.0, 1.0)
    warped, mask = warp(a, flow_ab)
    if not mask.any():
        raise EmptyValidSetError("No valid pixels after warping; cannot compute feature distance")
    filled = np.where(mask[..., None], warped, b)
    return feature_distance(filled, b, encoder or FrozenEncoder())
