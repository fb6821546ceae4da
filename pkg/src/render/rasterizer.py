"""Front-to-back alpha compositing of screen-space splats.

Two paths produce the same pixels bit for bit: a tile rasterizer (vectorized
over the pixels of a tile, differentiable) and a per-pixel reference loop
(forward only). Both share ``splat_alpha`` and the canonical depth order, and
both accumulate each pixel's sum splat by splat.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.nets import tape as T
from src.render.projection import Projected
from src.utils.errors import SingularSplatError

logger = logging.getLogger(__name__)

ALPHA_MAX = 0.999
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4
TILE = 16


@dataclass
class FeatureMap:
    """Rendered embedding E (H x W x C tensor) and its accumulated alpha."""

    values: T.Tensor
    alpha: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def conics(cov2d: np.ndarray) -> np.ndarray:
    """Inverse 2x2 covariances as (A, B, C) with Q = [[A, B], [B, C]].

    Raises:
        SingularSplatError: a covariance is not positive definite
    """
    a = cov2d[:, 0, 0]
    b = 0.5 * (cov2d[:, 0, 1] + cov2d[:, 1, 0])
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    bad = ~(np.isfinite(det) & (det > 0) & (a > 0))
    if np.any(bad):
        raise SingularSplatError(f"{int(bad.sum())} splat covariance(s) not invertible after regularization")
    return np.stack([c / det, -b / det, a / det], axis=-1)


def splat_alpha(opacity, conic_a, conic_b, conic_c, dx, dy):
    """Clamped alpha and the unclamped Gaussian falloff for pixel offsets.

    All arguments broadcast together. Returns ``(alpha, falloff, clamped)``;
    alpha below 1/255 is set to zero.
    """
    power = -0.5 * (conic_a * dx * dx + conic_c * dy * dy) - conic_b * dx * dy
    falloff = np.exp(power)
    raw = opacity * falloff
    clamped = raw > ALPHA_MAX
    alpha = np.where(clamped, ALPHA_MAX, raw)
    alpha = np.where(alpha < ALPHA_MIN, 0.0, alpha)
    return alpha, falloff, clamped


def evaluate_alpha(mean2d, cov2d, opacity: float, pixel) -> float:
    """Alpha of one splat at one pixel position."""
    conic = conics(np.asarray(cov2d, dtype=np.float64).reshape(1, 2, 2))[0]
    dx = float(pixel[0]) - float(mean2d[0])
    dy = float(pixel[1]) - float(mean2d[1])
    alpha, _, _ = splat_alpha(np.float64(opacity), conic[0], conic[1], conic[2], np.float64(dx), np.float64(dy))
    return float(alpha)


def sort_order(depth: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Ascending depth, ties broken by ascending Gaussian index."""
    return np.lexsort((index, depth))


def coverage_extent(cov2d: np.ndarray, opacity: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Half-widths of the region where a splat can reach alpha >= 1/255."""
    ratio = np.maximum(opacity * 255.0, 1.0)
    r = np.sqrt(2.0 * np.log(ratio))
    live = opacity * 255.0 >= 1.0
    ext_x = np.where(live, r * np.sqrt(cov2d[:, 0, 0]) + 1.0, -1.0)
    ext_y = np.where(live, r * np.sqrt(cov2d[:, 1, 1]) + 1.0, -1.0)
    return ext_x, ext_y


@dataclass
class _TileRecord:
    rows: slice
    cols: slice
    splats: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    alpha: np.ndarray
    falloff: np.ndarray
    clamped: np.ndarray
    t_before: np.ndarray
    contrib: np.ndarray
    weight: np.ndarray


def _blend_tile(feature: np.ndarray, alpha: np.ndarray):
    """Composite S sorted splats over P pixels: (E, T_final, T_before, contrib, weight)."""
    n_splats, n_pixels = alpha.shape
    t_after = np.cumprod(1.0 - alpha, axis=0)
    t_before = np.concatenate([np.ones((1, n_pixels)), t_after[:-1]], axis=0)
    active = t_before >= T_MIN
    contrib = active & (alpha > 0.0)
    weight = np.where(contrib, alpha * t_before, 0.0)
    terms = weight[:, :, None] * feature[:, None, :]
    summed = np.cumsum(np.concatenate([np.zeros((1,) + terms.shape[1:]), terms], axis=0), axis=0)[-1]
    last = active.sum(axis=0) - 1
    t_final = np.where(last >= 0, t_after[np.maximum(last, 0), np.arange(n_pixels)], 1.0)
    return summed, t_final, t_before, contrib, weight


def composite(projected: Projected, width: int, height: int, tile: int = TILE) -> FeatureMap:
    """Tile rasterizer; differentiable w.r.t. mean2d, cov2d, opacity and feature."""
    channels = projected.feature.shape[1]
    dtype = np.float64
    image = np.zeros((height, width, channels), dtype=dtype)
    t_map = np.ones((height, width), dtype=dtype)
    n = len(projected)
    if n == 0:
        return FeatureMap(T.Tensor(image), 1.0 - t_map)

    mean = projected.mean2d.value.astype(dtype)
    cov = projected.cov2d.value.astype(dtype)
    opacity = projected.opacity.value.astype(dtype)
    feature = projected.feature.value.astype(dtype)
    conic = conics(cov)
    order = sort_order(projected.depth, projected.index)
    ext_x, ext_y = coverage_extent(cov, opacity)
    lo_x = mean[:, 0] - ext_x
    hi_x = mean[:, 0] + ext_x
    lo_y = mean[:, 1] - ext_y
    hi_y = mean[:, 1] + ext_y

    records: List[_TileRecord] = []
    for r0 in range(0, height, tile):
        r1 = min(r0 + tile, height)
        for c0 in range(0, width, tile):
            c1 = min(c0 + tile, width)
            hit = ((hi_x[order] >= c0 + 0.5) & (lo_x[order] <= c1 - 0.5)
                   & (hi_y[order] >= r0 + 0.5) & (lo_y[order] <= r1 - 0.5) & (ext_x[order] >= 0))
            splats = order[hit]
            if splats.size == 0:
                continue
            ys, xs = np.meshgrid(np.arange(r0, r1) + 0.5, np.arange(c0, c1) + 0.5, indexing="ij")
            px = xs.reshape(-1)
            py = ys.reshape(-1)
            dx = px[None, :] - mean[splats, 0][:, None]
            dy = py[None, :] - mean[splats, 1][:, None]
            alpha, falloff, clamped = splat_alpha(opacity[splats][:, None], conic[splats, 0][:, None],
                                                  conic[splats, 1][:, None], conic[splats, 2][:, None], dx, dy)
            summed, t_final, t_before, contrib, weight = _blend_tile(feature[splats], alpha)
            image[r0:r1, c0:c1] = summed.reshape(r1 - r0, c1 - c0, channels)
            t_map[r0:r1, c0:c1] = t_final.reshape(r1 - r0, c1 - c0)
            records.append(_TileRecord(slice(r0, r1), slice(c0, c1), splats, dx, dy, alpha, falloff,
                                       clamped, t_before, contrib, weight))

    def backward(g):
        g_mean = np.zeros_like(mean)
        g_cov = np.zeros_like(cov)
        g_opacity = np.zeros_like(opacity)
        g_feature = np.zeros_like(feature)
        for rec in records:
            ge = g[rec.rows, rec.cols].reshape(-1, channels)
            f = feature[rec.splats]
            np.add.at(g_feature, rec.splats, rec.weight @ ge)
            gf = f @ ge.T
            contrib_w = gf * rec.weight
            later = np.cumsum(contrib_w[::-1], axis=0)[::-1] - contrib_w
            safe = np.where(rec.contrib, 1.0 - rec.alpha, 1.0)
            d_alpha = np.where(rec.contrib, rec.t_before * gf - later / safe, 0.0)
            d_alpha = np.where(rec.clamped, 0.0, d_alpha)
            np.add.at(g_opacity, rec.splats, np.sum(d_alpha * rec.falloff, axis=1))
            d_power = d_alpha * rec.alpha
            ca = conic[rec.splats, 0][:, None]
            cb = conic[rec.splats, 1][:, None]
            cc = conic[rec.splats, 2][:, None]
            d_mx = np.sum((ca * rec.dx + cb * rec.dy) * d_power, axis=1)
            d_my = np.sum((cb * rec.dx + cc * rec.dy) * d_power, axis=1)
            np.add.at(g_mean, rec.splats, np.stack([d_mx, d_my], axis=1))
            dq = np.empty((len(rec.splats), 2, 2))
            dq[:, 0, 0] = np.sum(-0.5 * rec.dx * rec.dx * d_power, axis=1)
            dq[:, 0, 1] = np.sum(-0.5 * rec.dx * rec.dy * d_power, axis=1)
            dq[:, 1, 0] = dq[:, 0, 1]
            dq[:, 1, 1] = np.sum(-0.5 * rec.dy * rec.dy * d_power, axis=1)
            q = np.stack([np.stack([ca[:, 0], cb[:, 0]], axis=1), np.stack([cb[:, 0], cc[:, 0]], axis=1)], axis=1)
            np.add.at(g_cov, rec.splats, -(q @ dq @ q))
        return g_mean, g_cov, g_opacity, g_feature

    values = T.make_node(image, (projected.mean2d, projected.cov2d, projected.opacity, projected.feature),
                         backward)
    return FeatureMap(values, 1.0 - t_map)


def composite_reference(projected: Projected, width: int, height: int) -> FeatureMap:
    """Per-pixel reference loop over all splats (forward only)."""
    channels = projected.feature.shape[1]
    image = np.zeros((height, width, channels))
    t_map = np.ones((height, width))
    if len(projected) == 0:
        return FeatureMap(T.Tensor(image), 1.0 - t_map)
    order = sort_order(projected.depth, projected.index)
    mean = projected.mean2d.value.astype(np.float64)[order]
    conic = conics(projected.cov2d.value.astype(np.float64))[order]
    opacity = projected.opacity.value.astype(np.float64)[order]
    feature = projected.feature.value.astype(np.float64)[order]
    for row in range(height):
        for col in range(width):
            dx = (col + 0.5) - mean[:, 0]
            dy = (row + 0.5) - mean[:, 1]
            alpha, _, _ = splat_alpha(opacity, conic[:, 0], conic[:, 1], conic[:, 2], dx, dy)
            pixel = np.zeros(channels)
            transmittance = 1.0
            for k in np.flatnonzero(alpha > 0.0):
                pixel = pixel + feature[k] * (alpha[k] * transmittance)
                transmittance = transmittance * (1.0 - alpha[k])
                if transmittance < T_MIN:
                    break
            image[row, col] = pixel
            t_map[row, col] = transmittance
    return FeatureMap(T.Tensor(image), 1.0 - t_map)
