"""Linearized (EWA) projection of 3D Gaussians to screen-space splats."""

from dataclasses import dataclass
from typing import Union

import numpy as np

from src.nets import tape as T
from src.scene.camera import Camera
from src.scene.gaussians import DeformedCloud, DeformedGaussian, normalize_quaternions, quaternion_to_matrix

Z_NEAR = 0.01
COV_EPS = 0.3
CHI2_99 = 9.21034


@dataclass
class Splat2D:
    """Screen-space footprint of one Gaussian."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    gaussian_index: int


class Culled:
    """Marker returned for Gaussians that cannot touch the image."""

    def __repr__(self):
        return "Culled"


CULLED = Culled()


@dataclass
class Projected:
    """Surviving splats of a whole cloud, in input order.

    ``mean2d`` (K x 2), ``cov2d`` (K x 2 x 2), ``opacity`` (K) and
    ``feature`` (K x D) are tape tensors; ``depth`` and ``index`` are plain.
    """

    mean2d: T.Tensor
    cov2d: T.Tensor
    opacity: T.Tensor
    feature: T.Tensor
    depth: np.ndarray
    index: np.ndarray

    def __len__(self) -> int:
        return len(self.index)

    def splats(self):
        return [Splat2D(self.mean2d.value[k].copy(), self.cov2d.value[k].copy(),
                        float(self.depth[k]), int(self.index[k])) for k in range(len(self))]


def _jacobian(cam_points, camera: Camera):
    x = T.getitem(cam_points, (slice(None), 0))
    y = T.getitem(cam_points, (slice(None), 1))
    z = T.getitem(cam_points, (slice(None), 2))
    inv_z = T.div(1.0, z)
    inv_z2 = T.mul(inv_z, inv_z)
    zeros = np.zeros(cam_points.shape[0], dtype=cam_points.dtype)
    row0 = T.stack([T.mul(camera.fx, inv_z), zeros, T.neg(T.mul(camera.fx, T.mul(x, inv_z2)))], axis=1)
    row1 = T.stack([zeros, T.mul(camera.fy, inv_z), T.neg(T.mul(camera.fy, T.mul(y, inv_z2)))], axis=1)
    jac = T.stack([row0, row1], axis=1)
    mean2d = T.stack([T.add(T.mul(camera.fx, T.mul(x, inv_z)), camera.cx),
                      T.add(T.mul(camera.fy, T.mul(y, inv_z)), camera.cy)], axis=1)
    return jac, mean2d


def project_gaussians(cloud: DeformedCloud, camera: Camera) -> Projected:
    """Project every Gaussian; culled ones are dropped.

    A Gaussian is culled when its camera depth is at most ``Z_NEAR`` or its
    99% ellipse bounding box misses the image. Survivors get
    cov2d = J W Σ Wᵀ Jᵀ + 0.3 I.
    """
    n = len(cloud)
    dtype = cloud.center.dtype
    empty = Projected(T.Tensor(np.zeros((0, 2), dtype)), T.Tensor(np.zeros((0, 2, 2), dtype)),
                      T.Tensor(np.zeros(0, dtype)), T.Tensor(np.zeros((0, cloud.feature.shape[1]), dtype)),
                      np.zeros(0), np.zeros(0, dtype=np.int64))
    if n == 0:
        return empty
    rot_cam = camera.R.astype(dtype)
    depth_all = cloud.center.value @ camera.R[2] + camera.T[2]
    front = np.flatnonzero(depth_all > Z_NEAR)
    if front.size == 0:
        return empty

    center = T.getitem(cloud.center, front)
    cam_points = T.add(T.matmul(center, rot_cam.T), camera.T.astype(dtype))
    jac, mean2d = _jacobian(cam_points, camera)

    rot = quaternion_to_matrix(normalize_quaternions(T.getitem(cloud.rotation, front)))
    scale = T.exp(T.getitem(cloud.log_scale, front))
    m = T.mul(rot, T.reshape(scale, (-1, 1, 3)))
    sigma = T.matmul(m, T.swap_last(m))
    a = T.matmul(jac, rot_cam)
    cov2d = T.add(T.matmul(T.matmul(a, sigma), T.swap_last(a)), COV_EPS * np.eye(2, dtype=dtype))

    mu = mean2d.value
    cov = cov2d.value
    ext_x = np.sqrt(CHI2_99 * cov[:, 0, 0])
    ext_y = np.sqrt(CHI2_99 * cov[:, 1, 1])
    inside = ((mu[:, 0] + ext_x >= 0) & (mu[:, 0] - ext_x <= camera.width)
              & (mu[:, 1] + ext_y >= 0) & (mu[:, 1] - ext_y <= camera.height))
    keep = np.flatnonzero(inside)
    index = front[keep]
    return Projected(
        mean2d=T.getitem(mean2d, keep),
        cov2d=T.getitem(cov2d, keep),
        opacity=T.sigmoid(T.getitem(cloud.opacity_logit, index)),
        feature=T.getitem(cloud.feature, index),
        depth=depth_all[index],
        index=index,
    )


def project(g: DeformedGaussian, camera: Camera, index: int = 0) -> Union[Splat2D, Culled]:
    """Project a single deformed Gaussian; returns ``CULLED`` when invisible."""
    cloud = DeformedCloud(
        center=T.Tensor(np.asarray(g.center, dtype=np.float64).reshape(1, 3)),
        log_scale=T.Tensor(np.asarray(g.log_scale, dtype=np.float64).reshape(1, 3)),
        rotation=T.Tensor(np.asarray(g.rotation, dtype=np.float64).reshape(1, 4)),
        opacity_logit=T.Tensor(np.array([g.opacity_logit], dtype=np.float64)),
        feature=T.Tensor(np.asarray(g.feature, dtype=np.float64).reshape(1, -1)),
    )
    projected = project_gaussians(cloud, camera)
    if len(projected) == 0:
        return CULLED
    splat = projected.splats()[0]
    splat.gaussian_index = index
    return splat
