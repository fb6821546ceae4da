from dataclasses import dataclass

import numpy as np

from src.nets import tape as T
from src.nets.layers import MLP, Module, ResidualMLP
from src.render.rasterizer import FeatureMap


@dataclass
class RenderOutput:
    """Embedding E, color C = sigmoid(color_head(E)) and feature F = feature_head(E)."""

    embedding: FeatureMap
    color: T.Tensor
    feature: T.Tensor


class DecoderHeads(Module):
    """Per-pixel color head (32 -> 64 -> 3) and residual feature head (32 -> 64 -> 32)."""

    def __init__(self, rng: np.random.Generator, channels: int = 32, hidden: int = 64):
        self.color_head = MLP([channels, hidden, 3], rng, name="color_head")
        self.feature_head = ResidualMLP(channels, hidden, rng, name="feature_head")


def decode_heads(embedding: FeatureMap, heads: DecoderHeads) -> RenderOutput:
    color = T.sigmoid(heads.color_head(embedding.values))
    feature = heads.feature_head(embedding.values)
    return RenderOutput(embedding=embedding, color=color, feature=feature)
