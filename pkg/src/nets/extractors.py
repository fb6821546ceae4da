"""Feature extractors feeding the transform predictors."""

import numpy as np

from src.nets import tape as T
from src.nets.layers import Conv2d, Module, ResidualMLP
from src.utils.errors import InvalidInputError

MIN_STYLE_SIZE = 64
MIN_GAUSSIANS = 64


class GaussianFeatureExtractor(Module):
    """Per-Gaussian residual MLP 32 -> 64 -> 32 (identity at init)."""

    def __init__(self, rng: np.random.Generator, width: int = 32, hidden: int = 64):
        self.mlp = ResidualMLP(width, hidden, rng, name="gaussian_extractor")

    def __call__(self, gaussian_features):
        n = gaussian_features.shape[0]
        if n < MIN_GAUSSIANS:
            raise InvalidInputError(f"Gaussian feature extractor needs at least {MIN_GAUSSIANS} Gaussians for covariance estimation, got {n}")
        return self.mlp(gaussian_features)


class StyleFeatureExtractor(Module):
    """Three convs (stride 2, 2, 1), 32 channels, flattened to sample rows."""

    def __init__(self, rng: np.random.Generator, channels: int = 32):
        self.convs = [
            Conv2d(channels, channels, rng, stride=2, padding=1, name="style_extractor.0"),
            Conv2d(channels, channels, rng, stride=2, padding=1, name="style_extractor.1"),
            Conv2d(channels, channels, rng, stride=1, padding=1, name="style_extractor.2"),
        ]
        self.channels = channels

    def __call__(self, style_features):
        h_in, w_in = style_features.shape[0], style_features.shape[1]
        if h_in < MIN_STYLE_SIZE or w_in < MIN_STYLE_SIZE:
            raise InvalidInputError(
                f"Style input must be at least {MIN_STYLE_SIZE}x{MIN_STYLE_SIZE}, got {w_in}x{h_in}"
            )
        h = T.lift(style_features)
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = T.relu(h)
        return T.reshape(h, (-1, self.channels))

