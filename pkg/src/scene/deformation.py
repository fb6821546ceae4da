"""Space-time deformation field: factorized plane grids plus a decoder MLP."""

import logging
from typing import Sequence, Tuple

import numpy as np

from src.nets import tape as T
from src.nets.layers import Linear, MLP, Module
from src.nets.tape import Parameter
from src.scene.gaussians import DeformedCloud, GaussianCloud, normalize_quaternions

# (axis_a, axis_b) over (x, y, z, t)
PLANE_AXES = (("xy", (0, 1)), ("xz", (0, 2)), ("yz", (1, 2)),
              ("xt", (0, 3)), ("yt", (1, 3)), ("zt", (2, 3)))
SPATIAL_PLANES = ("xy", "xz", "yz")


class PlaneLevel(Module):
    """Six planes at one resolution, each ``resolution x resolution x width``."""

    def __init__(self, resolution: int, width: int, rng: np.random.Generator, level: int):
        self.resolution = resolution
        for name, _ in PLANE_AXES:
            if name in SPATIAL_PLANES:
                init = rng.uniform(0.1, 0.5, size=(resolution, resolution, width))
            else:
                init = np.ones((resolution, resolution, width))
            setattr(self, name, Parameter(init, name=f"deformation.level{level}.{name}"))

    def query(self, coords):
        """Product of the six plane samples at normalized coords (N x 4, in [0, 1])."""
        scaled = T.mul(coords, float(self.resolution - 1))
        feature = None
        for name, (a, b) in PLANE_AXES:
            uv = T.getitem(scaled, (slice(None), [a, b]))
            sample = T.bilinear_sample(getattr(self, name), uv)
            feature = sample if feature is None else T.mul(feature, sample)
        return feature


class DeformationField(Module):
    """Maps (canonical center, t) to deltas of center, log-scale and rotation.

    Coordinates are normalized by the scene bounds; the time axis spans
    [0, 1]. Queries outside the bounds clamp to the grid border.
    """

    def __init__(self, bounds: Tuple[Sequence[float], Sequence[float]], rng: np.random.Generator,
                 resolutions: Sequence[int] = (8, 16), width: int = 16, hidden: int = 64):
        self._lo = np.asarray(bounds[0], dtype=np.float64)
        self._hi = np.asarray(bounds[1], dtype=np.float64)
        self.levels = [PlaneLevel(r, width, rng, i) for i, r in enumerate(resolutions)]
        feature_dim = width * len(resolutions)
        self.trunk = MLP([feature_dim, hidden, hidden], rng, name="deformation.trunk")
        self.head_center = Linear(hidden, 3, rng, zero_init=True, name="deformation.head_center")
        self.head_scale = Linear(hidden, 3, rng, zero_init=True, name="deformation.head_scale")
        self.head_rotation = Linear(hidden, 4, rng, zero_init=True, name="deformation.head_rotation")
        self.logger = logging.getLogger(__name__)

    @property
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self._lo.copy(), self._hi.copy()

    def normalize(self, centers, t: float):
        extent = np.where(self._hi > self._lo, self._hi - self._lo, 1.0)
        spatial = T.div(T.sub(centers, self._lo), extent)
        n = centers.shape[0]
        time = np.full((n, 1), float(t), dtype=spatial.dtype)
        return T.concat([spatial, time], axis=1)

    def features(self, centers, t: float):
        coords = self.normalize(centers, t)
        return T.concat([level.query(coords) for level in self.levels], axis=1)

    def __call__(self, centers, t: float):
        h = T.relu(self.trunk(self.features(centers, t)))
        return self.head_center(h), self.head_scale(h), self.head_rotation(h)

    def zero_grids(self):
        for level in self.levels:
            for name, _ in PLANE_AXES:
                getattr(level, name).value[...] = 0.0


def deform(gaussians: GaussianCloud, field: DeformationField, t: float, static: bool = False) -> DeformedCloud:
    """Deform canonical Gaussians to time ``t``.

    Opacity and feature pass through unchanged; rotation is renormalized after
    the additive update. ``static`` skips the field (coarse stage).
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"Timestamp must lie in [0, 1], got {t}")
    if static or len(gaussians) == 0:
        return DeformedCloud(gaussians.center, gaussians.log_scale, gaussians.rotation,
                             gaussians.opacity_logit, gaussians.feature)
    d_center, d_scale, d_rot = field(gaussians.center, t)
    return DeformedCloud(
        center=T.add(gaussians.center, d_center),
        log_scale=T.add(gaussians.log_scale, d_scale),
        rotation=normalize_quaternions(T.add(gaussians.rotation, d_rot)),
        opacity_logit=gaussians.opacity_logit,
        feature=gaussians.feature,
    )


def bilinear_weights(coords: np.ndarray, resolution: int) -> np.ndarray:
    """The four bilinear weights (N x 4) of queries in cell units."""
    _, weights, _ = T.bilinear_weights(np.asarray(coords, dtype=np.float64), (resolution, resolution))
    return np.stack(weights, axis=1)
