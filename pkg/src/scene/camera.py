from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from src.utils.errors import InvalidInputError


@dataclass
class Camera:
    """Pinhole camera; ``R``/``T`` map world points into camera space.

    Camera space looks down +z with image x to the right and y down. Pixel
    (row i, column j) has its centre at (j + 0.5, i + 0.5).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    T: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.T = np.asarray(self.T, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError(f"Image size must be positive, got {self.width}x{self.height}")
        if not np.allclose(self.R @ self.R.T, np.eye(3), atol=1e-9, rtol=0.0):
            raise InvalidInputError("Camera rotation R is not orthonormal")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world space."""
        return -self.R.T @ self.T

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.R.T + self.T

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (N x 2) and camera depths (N,) of world points."""
        cam = self.world_to_camera(np.atleast_2d(points))
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.stack([self.fx * cam[:, 0] / z + self.cx, self.fy * cam[:, 1] / z + self.cy], axis=1)
        return uv, z

    def pixel_centers(self) -> np.ndarray:
        """H x W x 2 array of (x, y) pixel-centre coordinates."""
        ys, xs = np.meshgrid(np.arange(self.height) + 0.5, np.arange(self.width) + 0.5, indexing="ij")
        return np.stack([xs, ys], axis=-1)

    def rays(self, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """World-space origin and unit directions for pixel coordinates (..., 2)."""
        local = np.stack([(pixels[..., 0] - self.cx) / self.fx,
                          (pixels[..., 1] - self.cy) / self.fy,
                          np.ones(pixels.shape[:-1])], axis=-1)
        dirs = local @ self.R
        dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
        return self.center, dirs

    def to_dict(self) -> Dict:
        return {
            "fx": float(self.fx), "fy": float(self.fy), "cx": float(self.cx), "cy": float(self.cy),
            "width": int(self.width), "height": int(self.height),
            "R": self.R.reshape(-1).tolist(), "T": self.T.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Camera":
        return cls(fx=data["fx"], fy=data["fy"], cx=data["cx"], cy=data["cy"],
                   width=int(data["width"]), height=int(data["height"]),
                   R=np.array(data["R"]).reshape(3, 3), T=np.array(data["T"]))


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 1.0, 0.0)) -> Tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, T) for a camera at ``eye`` looking at ``target``.

    ``up`` is the world up direction; the image y axis points opposite to it.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return R, -R @ eye


def make_camera(eye, target, resolution: int, fov_deg: float) -> Camera:
    R, T = look_at(eye, target)
    focal = 0.5 * resolution / np.tan(np.radians(fov_deg) / 2.0)
    return Camera(fx=focal, fy=focal, cx=resolution / 2.0, cy=resolution / 2.0,
                  width=resolution, height=resolution, R=R, T=T)
