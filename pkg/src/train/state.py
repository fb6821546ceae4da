"""All trainable parts of a run, bundled for checkpointing."""

import hashlib
import logging
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from src.formats.checkpoint import load_checkpoint, save_checkpoint
from src.nets.cspn import CSPN
from src.nets.extractors import GaussianFeatureExtractor, StyleFeatureExtractor
from src.nets.layers import Module
from src.nets.revnet import RevNet
from src.render.heads import DecoderHeads
from src.scene.camera import Camera
from src.scene.deformation import DeformationField
from src.scene.gaussians import GaussianCloud
from src.scene.generator import SceneBundle
from src.utils.errors import FormatError
from src.wct.predictor import TransformPredictor

logger = logging.getLogger(__name__)

GAUSSIAN_FIELDS = ("center", "log_scale", "rotation", "opacity_logit", "feature")


class ModelState(Module):
    """Gaussians, deformation field and every network of the pipeline.

    Parameter names follow attribute paths (``revnet.blocks.0.conv1.weight``)
    and are the checkpoint tensor names. Cameras and timestamps of the scene
    travel along so a checkpoint alone can render.
    """

    def __init__(self, gaussians: GaussianCloud, deformation: DeformationField, revnet: RevNet,
                 heads: DecoderHeads, gaussian_extractor: GaussianFeatureExtractor, style_extractor: StyleFeatureExtractor,
                 predictor: TransformPredictor, cspn: CSPN, cameras: List[Camera], timestamps: np.ndarray,
                 stage: int = 0):
        self.gaussians = gaussians
        self.deformation = deformation
        self.revnet = revnet
        self.heads = heads
        self.gaussian_extractor = gaussian_extractor
        self.style_extractor = style_extractor
        self.predictor = predictor
        self.cspn = cspn
        self._cameras = list(cameras)
        self._timestamps = np.asarray(timestamps, dtype=np.float64)
        self._stage = stage

    @property
    def cameras(self) -> List[Camera]:
        return self._cameras

    @property
    def timestamps(self) -> np.ndarray:
        return self._timestamps

    @property
    def stage(self) -> int:
        return self._stage

    @stage.setter
    def stage(self, value: int):
        self._stage = int(value)

    @classmethod
    def initialize(cls, bundle: SceneBundle, rng: np.random.Generator, dtype=np.float64,
                   cspn_iterations: int = 3) -> "ModelState":
        """Fresh networks around a copy of the bundle's Gaussians and field."""
        g = bundle.gaussians
        gaussians = GaussianCloud(*(getattr(g, name).value.copy() for name in GAUSSIAN_FIELDS))
        deformation = DeformationField(bundle.bounds, np.random.default_rng(0))
        deformation.load_state_dict(bundle.deformation.state_dict())
        state = cls(
            gaussians=gaussians,
            deformation=deformation,
            revnet=RevNet(rng),
            heads=DecoderHeads(rng),
            gaussian_extractor=GaussianFeatureExtractor(rng),
            style_extractor=StyleFeatureExtractor(rng),
            predictor=TransformPredictor(rng),
            cspn=CSPN(rng, iterations=cspn_iterations),
            cameras=bundle.cameras,
            timestamps=bundle.timestamps,
        )
        state.astype(dtype)
        return state

    def stage1_modules(self) -> Dict[str, Module]:
        return {"gaussians": self.gaussians, "deformation": self.deformation,
                "revnet": self.revnet, "heads": self.heads}

    def stage2_modules(self) -> Dict[str, Module]:
        return {"gaussian_extractor": self.gaussian_extractor, "style_extractor": self.style_extractor, "predictor": self.predictor, "cspn": self.cspn}

    def to_tensors(self) -> Dict[str, np.ndarray]:
        tensors = self.state_dict()
        lo, hi = self.deformation.bounds
        tensors["meta.stage"] = np.array([float(self._stage)])
        tensors["meta.bounds"] = np.stack([lo, hi])
        tensors["meta.cspn_iterations"] = np.array([float(self.cspn.iterations)])
        tensors["cameras.intrinsics"] = np.array(
            [[c.fx, c.fy, c.cx, c.cy, c.width, c.height] for c in self._cameras], dtype=np.float64
        ).reshape(-1, 6)
        tensors["cameras.R"] = np.array([c.R for c in self._cameras]).reshape(-1, 3, 3)
        tensors["cameras.T"] = np.array([c.T for c in self._cameras]).reshape(-1, 3)
        tensors["scene.timestamps"] = self._timestamps.copy()
        return tensors

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> "ModelState":
        """Rebuild from checkpoint tensors.

        Raises:
            FormatError: a required tensor is missing or has the wrong shape
        """
        try:
            bounds = tensors["meta.bounds"]
            gaussians = GaussianCloud(*(tensors[f"gaussians.{name}"] for name in GAUSSIAN_FIELDS))
            intrinsics = tensors["cameras.intrinsics"]
            rotations = tensors["cameras.R"]
            translations = tensors["cameras.T"]
            timestamps = tensors["scene.timestamps"]
            stage = int(tensors["meta.stage"][0])
            cspn_iterations = int(tensors["meta.cspn_iterations"][0])
            dtype = tensors["gaussians.center"].dtype
        except KeyError as e:
            raise FormatError(f"Checkpoint is missing tensor {str(e)}")
        cameras = [
            Camera(fx=k[0], fy=k[1], cx=k[2], cy=k[3], width=int(k[4]), height=int(k[5]), R=r, T=t)
            for k, r, t in zip(intrinsics, rotations, translations)
        ]
        rng = np.random.default_rng(0)
        state = cls(
            gaussians=gaussians,
            deformation=DeformationField((bounds[0], bounds[1]), rng),
            revnet=RevNet(rng),
            heads=DecoderHeads(rng),
            gaussian_extractor=GaussianFeatureExtractor(rng),
            style_extractor=StyleFeatureExtractor(rng),
            predictor=TransformPredictor(rng),
            cspn=CSPN(rng, iterations=cspn_iterations),
            cameras=cameras,
            timestamps=timestamps,
            stage=stage,
        )
        state.astype(dtype)
        try:
            state.load_state_dict(tensors)
        except (KeyError, ValueError) as e:
            raise FormatError(f"Checkpoint does not match the model layout: {str(e)}")
        return state

    def save(self, path: Union[str, Path]):
        save_checkpoint(path, self.to_tensors())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ModelState":
        state = cls.from_tensors(load_checkpoint(path))
        logger.info(f"Loaded stage-{state.stage} model from {path}: {len(state.gaussians)} Gaussians, "
                    f"{len(state.cameras)} cameras")
        return state

    def digest(self) -> str:
        """SHA-256 over all parameters, used to key cached style transforms."""
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
        return h.hexdigest()
