import logging
from typing import Optional

import numpy as np

from src.nets.revnet import rev_inverse
from src.render.rasterizer import TILE
from src.stylize.base import StylizedFrame, Stylizer
from src.train.state import ModelState
from src.wct.transform import apply_transform, closed_form_transform


class PerFrameStylizer(Stylizer):
    """2D baseline: closed-form WCT on every rendered frame independently.

    Statistics come from the frame's own reversible features rather than the
    shared Gaussian embeddings, so nothing ties neighbouring views together.
    """

    name = "per_frame"

    def __init__(self, state: ModelState, tile: int = TILE):
        super().__init__(state, tile)
        self.logger = logging.getLogger(__name__)

    def set_style(self, style_image: np.ndarray, style_key: Optional[bytes] = None):
        self.style_features = self._style_features(style_image)

    def stylize(self, camera: int, t: float) -> StylizedFrame:
        self._require_style()
        feature = self.render_view(camera, t).feature.value
        channels = feature.shape[-1]
        transform = closed_form_transform(feature.reshape(-1, channels),
                                          self.style_features.reshape(-1, channels))
        stylized = rev_inverse(self.state.revnet, apply_transform(feature, transform)).value
        reconstruction = rev_inverse(self.state.revnet, feature).value
        self.logger.debug(f"Per-frame WCT for camera {camera}, t={t:.3f}")
        return StylizedFrame(transformed=stylized, reconstruction=reconstruction)
