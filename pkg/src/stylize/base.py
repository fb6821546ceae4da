from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.nets.revnet import rev_forward
from src.render.renderer import render
from src.render.heads import RenderOutput
from src.render.rasterizer import TILE
from src.train.state import ModelState
from src.utils.errors import InvalidInputError, ViewMismatchError


@dataclass
class StylizedFrame:
    """Outputs of one stylized view; images are unclamped H x W x 3."""

    transformed: np.ndarray
    reconstruction: np.ndarray
    propagated: Optional[np.ndarray] = None

    @property
    def output(self) -> np.ndarray:
        """Propagated image when propagation ran, else the decoded transformed image."""
        return self.propagated if self.propagated is not None else self.transformed


class Stylizer(ABC):
    """Base class for stylization pipelines over a trained model."""

    name = "stylizer"

    def __init__(self, state: ModelState, tile: int = TILE):
        self.state = state
        self.tile = tile
        self.style_features: Optional[np.ndarray] = None

    @abstractmethod
    def set_style(self, style_image: np.ndarray, style_key: Optional[bytes] = None):
        """
        Prepare the pipeline for one style image.

        Args:
            style_image: H x W x 3 style image in [0, 1]
            style_key: Optional raw bytes identifying the image (cache key)
        """
        pass

    @abstractmethod
    def stylize(self, camera: int, t: float) -> StylizedFrame:
        """
        Stylize one view.

        Args:
            camera: Index into the model's cameras
            t: Timestamp in [0, 1]

        Returns:
            StylizedFrame with the transformed, reconstructed and (optionally)
            propagated images
        """
        pass

    def render_view(self, camera: int, t: float) -> RenderOutput:
        """Render C and F of a view with the frozen stage-1 model."""
        if not 0 <= camera < len(self.state.cameras):
            raise ViewMismatchError(f"Camera {camera} does not exist (model has {len(self.state.cameras)})")
        s = self.state
        return render(s.gaussians, s.deformation, s.cameras[camera], float(t), s.heads, tile=self.tile)

    def _style_features(self, style_image: np.ndarray) -> np.ndarray:
        image = np.asarray(style_image, dtype=self.state.gaussians.center.dtype)
        if image.ndim != 3 or image.shape[2] != 3:
            raise InvalidInputError(f"Style image must be H x W x 3, got {image.shape}")
        return rev_forward(self.state.revnet, image).value

    def _require_style(self):
        if self.style_features is None:
            raise InvalidInputError(f"{self.name}: call set_style before stylize")
