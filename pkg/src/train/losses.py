"""Reconstruction, art and propagation losses plus PSNR."""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from src.nets import tape as T
from src.nets.encoder import FrozenEncoder
from src.nets.revnet import RevNet, rev_inverse

STD_EPS = 1e-5


@dataclass
class EmbedLoss:
    total: T.Tensor
    color: float
    feature: float


def mse(a, b) -> T.Tensor:
    diff = T.sub(a, b)
    return T.mean(T.square(diff))


def loss_embed(color, feature, target: np.ndarray, revnet: RevNet,
               lambda_color: float = 1.0, lambda_feat: float = 1.0) -> EmbedLoss:
    """lambda_color·MSE(C, target) + lambda_feat·MSE(revnet.reverse(F), target).

    Raises:
        ValueError: shape mismatch between the rendered maps and the target
    """
    if tuple(color.shape) != tuple(target.shape) or tuple(feature.shape[:2]) != tuple(target.shape[:2]):
        raise ValueError(f"Rendered shapes {color.shape}/{feature.shape} do not match target {target.shape}")
    target = np.asarray(target, dtype=color.dtype)
    color_term = mse(color, target)
    feat_term = mse(rev_inverse(revnet, feature), target)
    total = T.add(T.mul(lambda_color, color_term), T.mul(lambda_feat, feat_term))
    return EmbedLoss(total, float(color_term.value), float(feat_term.value))


def channel_stats(feature):
    """Per-channel mean and std over the spatial axes of an H x W x C map."""
    mu = T.mean(feature, axis=(0, 1))
    centered = T.sub(feature, mu)
    var = T.mean(T.square(centered), axis=(0, 1))
    return mu, T.sqrt(T.add(var, STD_EPS))


@dataclass
class StyleStats:
    """Encoder statistics of a style image, computed once per style."""

    means: List[np.ndarray]
    stds: List[np.ndarray]

    @classmethod
    def of(cls, image: np.ndarray, encoder: FrozenEncoder) -> "StyleStats":
        means, stds = [], []
        for stage in encoder(np.asarray(image)):
            mu, sigma = channel_stats(stage.detach())
            means.append(mu.value)
            stds.append(sigma.value)
        return cls(means, stds)


def content_loss(stylized_maps: Sequence, target_maps: Sequence) -> T.Tensor:
    """MSE between the deepest encoder stages."""
    return mse(stylized_maps[-1], target_maps[-1].value)


def style_loss(stylized_maps: Sequence, style: StyleStats) -> T.Tensor:
    """Σ over stages of MSE(μ) + MSE(σ)."""
    total = None
    for stage, mu_s, sigma_s in zip(stylized_maps, style.means, style.stds):
        mu, sigma = channel_stats(stage)
        term = T.add(mse(mu, mu_s), mse(sigma, sigma_s))
        total = term if total is None else T.add(total, term)
    return total


@dataclass
class ArtLoss:
    total: T.Tensor
    content: float
    style: float


def loss_art(stylized, target: np.ndarray, style: StyleStats, encoder: FrozenEncoder,
             lambda_content: float = 1.0, lambda_style: float = 10.0) -> ArtLoss:
    """lambda_content·content + lambda_style·style, both on the frozen encoder."""
    stylized_maps = encoder(stylized)
    target_maps = encoder(np.asarray(target))
    content = content_loss(stylized_maps, target_maps)
    style_term = style_loss(stylized_maps, style)
    total = T.add(T.mul(lambda_content, content), T.mul(lambda_style, style_term))
    return ArtLoss(total, float(content.value), float(style_term.value))


def loss_pro(propagated, reconstruction: np.ndarray, encoder: FrozenEncoder) -> T.Tensor:
    """Σ over encoder stages of MSE(enc(propagated), enc(reversed F)); the reconstruction is a constant."""
    reference = encoder(np.asarray(reconstruction))
    total = None
    for stage, ref in zip(encoder(propagated), reference):
        term = mse(stage, ref.value)
        total = term if total is None else T.add(total, term)
    return total


def psnr(prediction: np.ndarray, target: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]."""
    prediction = np.clip(np.asarray(prediction, dtype=np.float64), 0.0, 1.0)
    err = float(np.mean((prediction - np.asarray(target, dtype=np.float64)) ** 2))
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / err))
