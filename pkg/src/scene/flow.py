"""Exact correspondences between views from the analytic scene."""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.scene.analytic import NEAR, NO_HIT
from src.utils.errors import ViewMismatchError

logger = logging.getLogger(__name__)

DEPTH_TOLERANCE = 1e-3


@dataclass(frozen=True)
class View:
    """One (camera, time) pair of a specific scene bundle."""

    bundle_id: str
    camera: int
    t: float


@dataclass
class FlowField:
    """Per-pixel displacement (H x W x 2, in pixels) and validity mask."""

    flow: np.ndarray
    valid: np.ndarray

    @property
    def width(self) -> int:
        return self.flow.shape[1]

    @property
    def height(self) -> int:
        return self.flow.shape[0]

    @property
    def valid_fraction(self) -> float:
        return float(self.valid.mean()) if self.valid.size else 0.0

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width, 2)), np.ones((height, width), dtype=bool))


def view(scene, camera: int, t: float) -> View:
    return View(scene.bundle_id, int(camera), float(t))


def _check(scene, v: View):
    if v.bundle_id != scene.bundle_id:
        raise ViewMismatchError(f"View belongs to bundle {v.bundle_id}, not {scene.bundle_id}")
    if not 0 <= v.camera < len(scene.cameras):
        raise ViewMismatchError(f"Camera {v.camera} does not exist (bundle has {len(scene.cameras)})")
    if not 0.0 <= v.t <= 1.0:
        raise ViewMismatchError(f"Timestamp {v.t} outside [0, 1]")


def map_points(scene, src: View, dst: View, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Map continuous pixel positions (N x 2) of ``src`` into ``dst``.

    Returns target positions and a validity mask: the surface seen at the
    source pixel must exist, land in front of and inside the target camera,
    and be the first surface hit along the target ray.
    """
    _check(scene, src)
    _check(scene, dst)
    analytic = scene.analytic
    cam_a = scene.cameras[src.camera]
    cam_b = scene.cameras[dst.camera]
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    origin, dirs = cam_a.rays(pixels)
    hit = analytic.intersect(origin, dirs, src.t)
    valid = hit.surface != NO_HIT
    local = analytic.to_local(hit.surface, hit.point, src.t)
    moved = analytic.to_world(hit.surface, local, dst.t)
    uv, z = cam_b.project(moved)
    uv = np.where(valid[:, None], uv, 0.0)
    valid &= np.isfinite(z) & (z > NEAR)
    valid &= (uv[:, 0] >= 0) & (uv[:, 0] < cam_b.width) & (uv[:, 1] >= 0) & (uv[:, 1] < cam_b.height)
    if np.any(valid):
        origin_b, dirs_b = cam_b.rays(uv[valid])
        hit_b = analytic.intersect(origin_b, dirs_b, dst.t)
        expected = np.linalg.norm(moved[valid] - origin_b, axis=1)
        visible = (hit_b.surface == hit.surface[valid]) & (
            np.abs(hit_b.distance - expected) <= DEPTH_TOLERANCE * np.maximum(expected, 1.0)
        )
        idx = np.flatnonzero(valid)
        valid[idx[~visible]] = False
    return uv, valid


def flow_oracle(scene, src: View, dst: View) -> FlowField:
    """Displacement from every pixel centre of ``src`` to its match in ``dst``.

    The field lives on the source grid. Pixels whose surface is occluded or
    off-frame in the target are invalid; identical views give zero flow and an
    all-valid mask.

    Raises:
        ViewMismatchError: views from another bundle or unknown cameras
    """
    _check(scene, src)
    _check(scene, dst)
    cam = scene.cameras[src.camera]
    if src == dst:
        return FlowField.zeros(cam.height, cam.width)
    centers = cam.pixel_centers().reshape(-1, 2)
    target, valid = map_points(scene, src, dst, centers)
    flow = np.where(valid[:, None], target - centers, 0.0)
    field = FlowField(flow.reshape(cam.height, cam.width, 2), valid.reshape(cam.height, cam.width))
    logger.debug(f"Flow {src} -> {dst}: valid fraction {field.valid_fraction:.3f}")
    return field
