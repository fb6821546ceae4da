"""Canonical Gaussian parameters stored as one array per attribute."""

from dataclasses import dataclass
from typing import List

import numpy as np

from src.nets import tape as T
from src.nets.layers import Module
from src.nets.tape import Parameter

FEATURE_DIM = 32


@dataclass
class Gaussian4D:
    """One canonical Gaussian (plain arrays)."""

    center: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    feature: np.ndarray

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.opacity_logit)))


@dataclass
class DeformedGaussian(Gaussian4D):
    """A Gaussian after deformation to some timestamp."""


class GaussianCloud(Module):
    """N canonical Gaussians; quaternions are (w, x, y, z)."""

    def __init__(self, center, log_scale, rotation, opacity_logit, feature):
        n = len(center)
        self.center = Parameter(np.asarray(center, dtype=np.float64).reshape(n, 3), name="gaussians.center")
        self.log_scale = Parameter(np.asarray(log_scale, dtype=np.float64).reshape(n, 3), name="gaussians.log_scale")
        self.rotation = Parameter(np.asarray(rotation, dtype=np.float64).reshape(n, 4), name="gaussians.rotation")
        self.opacity_logit = Parameter(np.asarray(opacity_logit, dtype=np.float64).reshape(n), name="gaussians.opacity_logit")
        self.feature = Parameter(np.asarray(feature, dtype=np.float64).reshape(n, FEATURE_DIM), name="gaussians.feature")

    @classmethod
    def empty(cls) -> "GaussianCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, FEATURE_DIM)))

    @classmethod
    def from_list(cls, gaussians: List[Gaussian4D]) -> "GaussianCloud":
        if not gaussians:
            return cls.empty()
        return cls(
            np.stack([g.center for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.array([g.opacity_logit for g in gaussians]),
            np.stack([g.feature for g in gaussians]),
        )

    def __len__(self) -> int:
        return self.center.shape[0]

    def __getitem__(self, i: int) -> Gaussian4D:
        return Gaussian4D(self.center.value[i].copy(), self.log_scale.value[i].copy(),
                          self.rotation.value[i].copy(), float(self.opacity_logit.value[i]),
                          self.feature.value[i].copy())

    def to_list(self) -> List[Gaussian4D]:
        return [self[i] for i in range(len(self))]

    def normalize_rotations(self):
        """Project quaternions back onto the unit sphere (after every step)."""
        q = self.rotation.value
        if len(q):
            norms = np.linalg.norm(q, axis=1, keepdims=True)
            self.rotation.value = q / np.where(norms > 0, norms, 1.0)


@dataclass
class DeformedCloud:
    """Deformed Gaussians at one timestamp; fields may be tape tensors."""

    center: T.Tensor
    log_scale: T.Tensor
    rotation: T.Tensor
    opacity_logit: T.Tensor
    feature: T.Tensor

    def __len__(self) -> int:
        return self.center.shape[0]

    def __getitem__(self, i: int) -> DeformedGaussian:
        return DeformedGaussian(self.center.value[i].copy(), self.log_scale.value[i].copy(),
                                self.rotation.value[i].copy(), float(self.opacity_logit.value[i]),
                                self.feature.value[i].copy())

    def to_list(self) -> List[DeformedGaussian]:
        return [self[i] for i in range(len(self))]


def normalize_quaternions(q):
    """Unit quaternions on the tape."""
    norm = T.sqrt(T.tsum(T.square(q), axis=-1, keepdims=True))
    return T.div(q, norm)


def quaternion_to_matrix(q):
    """Rotation matrices (N x 3 x 3) from unit quaternions (N x 4) on the tape."""
    w = T.getitem(q, (slice(None), 0))
    x = T.getitem(q, (slice(None), 1))
    y = T.getitem(q, (slice(None), 2))
    z = T.getitem(q, (slice(None), 3))

    def two(a, b):
        return T.mul(2.0, T.mul(a, b))

    r00 = T.sub(1.0, T.add(two(y, y), two(z, z)))
    r01 = T.sub(two(x, y), two(w, z))
    r02 = T.add(two(x, z), two(w, y))
    r10 = T.add(two(x, y), two(w, z))
    r11 = T.sub(1.0, T.add(two(x, x), two(z, z)))
    r12 = T.sub(two(y, z), two(w, x))
    r20 = T.sub(two(x, z), two(w, y))
    r21 = T.add(two(y, z), two(w, x))
    r22 = T.sub(1.0, T.add(two(x, x), two(y, y)))
    rows = [T.stack([r00, r01, r02], axis=1), T.stack([r10, r11, r12], axis=1), T.stack([r20, r21, r22], axis=1)]
    return T.stack(rows, axis=1)


def logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))
