"""Procedural dynamic scenes with analytic ground truth."""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.scene.analytic import AnalyticScene, Backdrop, Sphere
from src.scene.camera import Camera, make_camera
from src.scene.deformation import DeformationField
from src.scene.gaussians import FEATURE_DIM, GaussianCloud, logit
from src.utils.errors import SceneSpecError

logger = logging.getLogger(__name__)

MIN_RESOLUTION = 16
MAX_RESOLUTION = 512
MOTIONS = ("linear", "orbital")
LAYOUTS = ("ring", "row")
INIT_OPACITY = 0.8


@dataclass
class SceneSpec:
    """Procedural parameters of a generated scene."""

    n_spheres: int = 2
    motion: str = "linear"
    n_cameras: int = 6
    resolution: int = 64
    n_timesteps: int = 8
    n_gaussians: int = 2000
    layout: str = "ring"
    arc_degrees: float = 40.0
    camera_distance: float = 4.0
    baseline: float = 0.2
    fov_degrees: float = 45.0
    speed: float = 0.4

    def validate(self):
        if not MIN_RESOLUTION <= self.resolution <= MAX_RESOLUTION:
            raise SceneSpecError(
                f"Resolution must lie in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {self.resolution}"
            )
        if self.motion not in MOTIONS:
            raise SceneSpecError(f"Unknown motion model '{self.motion}', expected one of {MOTIONS}")
        if self.layout not in LAYOUTS:
            raise SceneSpecError(f"Unknown camera layout '{self.layout}', expected one of {LAYOUTS}")
        if self.n_cameras < 1:
            raise SceneSpecError(f"n_cameras must be >= 1, got {self.n_cameras}")
        if self.n_timesteps < 1:
            raise SceneSpecError(f"n_timesteps must be >= 1, got {self.n_timesteps}")
        if self.n_spheres < 0 or self.n_gaussians < 0:
            raise SceneSpecError("n_spheres and n_gaussians must be non-negative")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "SceneSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise SceneSpecError(f"Unknown scene spec keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SceneBundle:
    """Everything a run needs about one scene.

    ``ground_truth`` maps (camera index, timestamp index) to an H x W x 3
    image quantized to 8-bit levels.
    """

    spec: SceneSpec
    seed: int
    gaussians: GaussianCloud
    deformation: DeformationField
    cameras: List[Camera]
    timestamps: np.ndarray
    ground_truth: Dict[Tuple[int, int], np.ndarray]
    analytic: AnalyticScene
    bundle_id: str = ""
    held_out_camera: Optional[int] = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if np.any(np.diff(self.timestamps) <= 0):
            raise SceneSpecError("Timestamps must be strictly increasing")
        for (ci, _), image in self.ground_truth.items():
            cam = self.cameras[ci]
            if image.shape != (cam.height, cam.width, 3):
                raise SceneSpecError(
                    f"Ground truth for camera {ci} has shape {image.shape}, expected {(cam.height, cam.width, 3)}"
                )
        if not self.bundle_id:
            self.bundle_id = scene_id(self.spec, self.seed)

    @property
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.deformation.bounds

    def training_cameras(self) -> List[int]:
        return [i for i in range(len(self.cameras)) if i != self.held_out_camera]


def scene_id(spec: SceneSpec, seed: int) -> str:
    payload = json.dumps({"spec": spec.to_dict(), "seed": int(seed)}, sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:16]


def quantize(image: np.ndarray) -> np.ndarray:
    """Round to 8-bit levels so stored and in-memory images agree exactly."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def build_cameras(spec: SceneSpec) -> List[Camera]:
    target = np.zeros(3)
    cameras = []
    for i in range(spec.n_cameras):
        if spec.layout == "ring":
            if spec.n_cameras == 1:
                angle = 0.0
            else:
                angle = np.radians(-spec.arc_degrees / 2 + spec.arc_degrees * i / (spec.n_cameras - 1))
            eye = spec.camera_distance * np.array([np.sin(angle), 0.0, np.cos(angle)])
            cameras.append(make_camera(eye, target, spec.resolution, spec.fov_degrees))
        else:
            offset = spec.baseline * (i - (spec.n_cameras - 1) / 2)
            eye = np.array([offset, 0.0, spec.camera_distance])
            cameras.append(make_camera(eye, eye - np.array([0.0, 0.0, 1.0]), spec.resolution, spec.fov_degrees))
    return cameras


def build_analytic(spec: SceneSpec, rng: np.random.Generator) -> AnalyticScene:
    spheres = []
    for _ in range(spec.n_spheres):
        center0 = np.array([rng.uniform(-0.9, 0.9), rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.6)])
        radius = float(rng.uniform(0.3, 0.5))
        color_a = rng.uniform(0.2, 1.0, size=3)
        color_b = rng.uniform(0.0, 0.6, size=3)
        if spec.motion == "linear":
            direction = rng.normal(size=3)
            direction[2] *= 0.3
            velocity = spec.speed * direction / np.linalg.norm(direction)
            spheres.append(Sphere(center0, radius, color_a, color_b, "linear", velocity=velocity))
        else:
            spheres.append(Sphere(center0, radius, color_a, color_b, "orbital",
                                  angular_speed=float(spec.speed * rng.choice([-1.0, 1.0]))))
    backdrop = Backdrop(depth_z=-1.5, half_width=4.0, half_height=3.0,
                        color_a=rng.uniform(0.5, 0.9, size=3), color_b=rng.uniform(0.1, 0.4, size=3))
    return AnalyticScene(spheres, backdrop)


def sample_surface_points(analytic: AnalyticScene, n: int, rng: np.random.Generator,
                          extent: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Points on the t = 0 surfaces, allocated proportional to area.

    Returns points, surface ids and per-point area share.
    """
    areas = [4 * np.pi * s.radius ** 2 for s in analytic.spheres]
    areas.append(4 * extent[0] * extent[1])
    areas = np.asarray(areas)
    counts = rng.multinomial(n, areas / areas.sum()) if n else np.zeros(len(areas), dtype=np.int64)
    points, surfaces, share = [], [], []
    for i, sphere in enumerate(analytic.spheres):
        k = int(counts[i])
        d = rng.normal(size=(k, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        center, _ = sphere.pose(0.0)
        points.append(center + sphere.radius * d)
        surfaces.append(np.full(k, i))
        share.append(np.full(k, areas[i] / max(k, 1)))
    k = int(counts[-1])
    plane = np.stack([rng.uniform(-extent[0], extent[0], k), rng.uniform(-extent[1], extent[1], k),
                      np.full(k, analytic.backdrop.depth_z)], axis=1)
    points.append(plane)
    surfaces.append(np.full(k, analytic.backdrop_id))
    share.append(np.full(k, areas[-1] / max(k, 1)))
    return np.concatenate(points), np.concatenate(surfaces).astype(np.int64), np.concatenate(share)


def init_gaussians(analytic: AnalyticScene, n: int, rng: np.random.Generator,
                   extent: Tuple[float, float] = (2.0, 1.6)) -> GaussianCloud:
    """Surface-sampled Gaussians colored from the analytic albedo."""
    if n == 0:
        return GaussianCloud.empty()
    points, surfaces, share = sample_surface_points(analytic, n, rng, extent)
    radius = np.sqrt(share / np.pi)
    log_scale = np.log(np.repeat(radius[:, None], 3, axis=1))
    rotation = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    feature = rng.normal(scale=0.01, size=(n, FEATURE_DIM))
    feature[:, :3] = analytic.albedo_at(surfaces, points)
    opacity = np.full(n, logit(INIT_OPACITY))
    return GaussianCloud(points, log_scale, rotation, opacity, feature)


def scene_bounds(analytic: AnalyticScene, extent: Tuple[float, float] = (2.0, 1.6)) -> Tuple[np.ndarray, np.ndarray]:
    lo = np.array([-extent[0], -extent[1], analytic.backdrop.depth_z - 0.1])
    hi = np.array([extent[0], extent[1], 1.5])
    return lo, hi


def generate_scene(spec: SceneSpec, seed: int) -> SceneBundle:
    """Build a scene bundle; a pure function of (spec, seed).

    Raises:
        SceneSpecError: resolution outside 16..512 or other invalid fields
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    analytic = build_analytic(spec, rng)
    cameras = build_cameras(spec)
    timestamps = np.linspace(0.0, 1.0, spec.n_timesteps) if spec.n_timesteps > 1 else np.zeros(1)
    ground_truth = {}
    for ci, cam in enumerate(cameras):
        for ti, t in enumerate(timestamps):
            ground_truth[(ci, ti)] = quantize(analytic.render(cam, float(t)))
    gaussians = init_gaussians(analytic, spec.n_gaussians, rng)
    deformation = DeformationField(scene_bounds(analytic), rng)
    held_out = len(cameras) // 2 if len(cameras) > 1 else None
    bundle = SceneBundle(spec=spec, seed=seed, gaussians=gaussians, deformation=deformation,
                         cameras=cameras, timestamps=timestamps, ground_truth=ground_truth,
                         analytic=analytic, held_out_camera=held_out)
    logger.info(f"Generated scene {bundle.bundle_id}: {spec.n_spheres} spheres ({spec.motion}), "
                f"{len(cameras)} cameras, {len(timestamps)} timesteps, {len(gaussians)} Gaussians")
    return bundle
