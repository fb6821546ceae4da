"""Analytic oracle scene: textured spheres over a textured backdrop.

Ground-truth images and exact correspondences both come from here, never from
the Gaussians.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

BACKGROUND = np.array([0.05, 0.05, 0.08])
LIGHT_DIR = np.array([0.4, 0.7, 0.6]) / np.linalg.norm([0.4, 0.7, 0.6])
AMBIENT = 0.35
NEAR = 0.01
NO_HIT = -1


def rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass
class Sphere:
    """Textured sphere moving linearly (c0 + v t) or orbiting the y axis."""

    center0: np.ndarray
    radius: float
    color_a: np.ndarray
    color_b: np.ndarray
    motion: str = "linear"
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_speed: float = 0.0
    bands: int = 4

    def pose(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """World centre and body rotation at time ``t``."""
        if self.motion == "orbital":
            rot = rotation_y(self.angular_speed * t)
            return rot @ self.center0, rot
        return self.center0 + self.velocity * t, np.eye(3)

    def albedo(self, local: np.ndarray) -> np.ndarray:
        unit = local / np.linalg.norm(local, axis=-1, keepdims=True)
        polar = np.arccos(np.clip(unit[..., 1], -1.0, 1.0))
        azimuth = np.arctan2(unit[..., 2], unit[..., 0]) + np.pi
        cell = np.floor(polar / np.pi * self.bands) + np.floor(azimuth / (2 * np.pi) * 2 * self.bands)
        checker = (cell.astype(np.int64) % 2)[..., None]
        return np.where(checker == 0, self.color_a, self.color_b)

    def to_dict(self) -> Dict:
        return {"kind": "sphere", "center0": self.center0.tolist(), "radius": float(self.radius),
                "color_a": self.color_a.tolist(), "color_b": self.color_b.tolist(), "motion": self.motion,
                "velocity": self.velocity.tolist(), "angular_speed": float(self.angular_speed),
                "bands": int(self.bands)}

    @classmethod
    def from_dict(cls, data: Dict) -> "Sphere":
        return cls(np.array(data["center0"]), float(data["radius"]), np.array(data["color_a"]),
                   np.array(data["color_b"]), data["motion"], np.array(data["velocity"]),
                   float(data["angular_speed"]), int(data["bands"]))


@dataclass
class Backdrop:
    """Static plane z = depth_z facing +z, checker-plus-gradient texture."""

    depth_z: float
    half_width: float
    half_height: float
    color_a: np.ndarray
    color_b: np.ndarray
    cell: float = 0.5

    def albedo(self, points: np.ndarray) -> np.ndarray:
        cx = np.floor(points[..., 0] / self.cell)
        cy = np.floor(points[..., 1] / self.cell)
        checker = ((cx + cy).astype(np.int64) % 2)[..., None]
        ramp = 0.8 + 0.2 * np.clip((points[..., 0:1] + self.half_width) / (2 * self.half_width), 0.0, 1.0)
        return np.where(checker == 0, self.color_a, self.color_b) * ramp

    def to_dict(self) -> Dict:
        return {"kind": "backdrop", "depth_z": float(self.depth_z), "half_width": float(self.half_width),
                "half_height": float(self.half_height), "color_a": self.color_a.tolist(),
                "color_b": self.color_b.tolist(), "cell": float(self.cell)}

    @classmethod
    def from_dict(cls, data: Dict) -> "Backdrop":
        return cls(float(data["depth_z"]), float(data["half_width"]), float(data["half_height"]),
                   np.array(data["color_a"]), np.array(data["color_b"]), float(data["cell"]))


@dataclass
class Hit:
    """Per-ray intersection result: surface id, distance, world point, normal."""

    surface: np.ndarray
    distance: np.ndarray
    point: np.ndarray
    normal: np.ndarray


class AnalyticScene:
    """Surface list; index ``i < len(spheres)`` is a sphere, the last is the backdrop."""

    def __init__(self, spheres: List[Sphere], backdrop: Backdrop):
        self.spheres = spheres
        self.backdrop = backdrop

    @property
    def backdrop_id(self) -> int:
        return len(self.spheres)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, t: float) -> Hit:
        """Closest hit along unit rays ``dirs`` (..., 3) from one origin."""
        shape = dirs.shape[:-1]
        best = np.full(shape, np.inf)
        surface = np.full(shape, NO_HIT, dtype=np.int64)
        normal = np.zeros(dirs.shape)
        for i, sphere in enumerate(self.spheres):
            center, _ = sphere.pose(t)
            oc = origin - center
            b = dirs @ oc
            c = oc @ oc - sphere.radius ** 2
            disc = b * b - c
            ok = disc >= 0
            root = np.sqrt(np.where(ok, disc, 0.0))
            d0 = -b - root
            d1 = -b + root
            dist = np.where(d0 > NEAR, d0, np.where(d1 > NEAR, d1, np.inf))
            dist = np.where(ok, dist, np.inf)
            closer = dist < best
            best = np.where(closer, dist, best)
            surface = np.where(closer, i, surface)
            pts = origin + dirs * np.where(np.isfinite(dist), dist, 0.0)[..., None]
            n = (pts - center) / sphere.radius
            normal = np.where(closer[..., None], n, normal)
        plane = self.backdrop
        dz = dirs[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            dist = np.where(np.abs(dz) > 1e-12, (plane.depth_z - origin[2]) / dz, np.inf)
        dist = np.where(dist > NEAR, dist, np.inf)
        pts = origin + dirs * np.where(np.isfinite(dist), dist, 0.0)[..., None]
        inside = (np.abs(pts[..., 0]) <= plane.half_width) & (np.abs(pts[..., 1]) <= plane.half_height)
        dist = np.where(inside, dist, np.inf)
        closer = dist < best
        best = np.where(closer, dist, best)
        surface = np.where(closer, self.backdrop_id, surface)
        normal = np.where(closer[..., None], np.array([0.0, 0.0, 1.0]), normal)
        point = origin + dirs * np.where(np.isfinite(best), best, 0.0)[..., None]
        return Hit(surface=surface, distance=best, point=point, normal=normal)

    def to_local(self, surface: np.ndarray, points: np.ndarray, t: float) -> np.ndarray:
        """Material coordinates of world points on their surfaces at time ``t``."""
        local = points.copy()
        for i, sphere in enumerate(self.spheres):
            mask = surface == i
            if np.any(mask):
                center, rot = sphere.pose(t)
                local[mask] = (points[mask] - center) @ rot
        return local

    def to_world(self, surface: np.ndarray, local: np.ndarray, t: float) -> np.ndarray:
        world = local.copy()
        for i, sphere in enumerate(self.spheres):
            mask = surface == i
            if np.any(mask):
                center, rot = sphere.pose(t)
                world[mask] = local[mask] @ rot.T + center
        return world

    def shade(self, hit: Hit, t: float) -> np.ndarray:
        color = np.broadcast_to(BACKGROUND, hit.point.shape).copy()
        diffuse = AMBIENT + (1.0 - AMBIENT) * np.clip(hit.normal @ LIGHT_DIR, 0.0, 1.0)
        for i, sphere in enumerate(self.spheres):
            mask = hit.surface == i
            if np.any(mask):
                center, rot = sphere.pose(t)
                local = (hit.point[mask] - center) @ rot
                color[mask] = sphere.albedo(local) * diffuse[mask][:, None]
        mask = hit.surface == self.backdrop_id
        if np.any(mask):
            color[mask] = self.backdrop.albedo(hit.point[mask]) * diffuse[mask][:, None]
        return np.clip(color, 0.0, 1.0)

    def render(self, camera, t: float) -> np.ndarray:
        """H x W x 3 image in [0, 1], one ray per pixel centre."""
        origin, dirs = camera.rays(camera.pixel_centers())
        return self.shade(self.intersect(origin, dirs, t), t)

    def albedo_at(self, surface: np.ndarray, points: np.ndarray, t: float = 0.0) -> np.ndarray:
        color = np.zeros_like(points)
        for i, sphere in enumerate(self.spheres):
            mask = surface == i
            if np.any(mask):
                center, rot = sphere.pose(t)
                color[mask] = sphere.albedo((points[mask] - center) @ rot)
        mask = surface == self.backdrop_id
        if np.any(mask):
            color[mask] = self.backdrop.albedo(points[mask])
        return color

    def to_dict(self) -> Dict:
        return {"spheres": [s.to_dict() for s in self.spheres], "backdrop": self.backdrop.to_dict()}

    @classmethod
    def from_dict(cls, data: Dict) -> "AnalyticScene":
        return cls([Sphere.from_dict(s) for s in data["spheres"]], Backdrop.from_dict(data["backdrop"]))
