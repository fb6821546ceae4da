import logging
import time
from typing import Dict, Optional

import numpy as np

from src.formats.style_cache import StyleCache
from src.nets.revnet import rev_inverse
from src.nets.whiten import whiten_image
from src.render.rasterizer import TILE
from src.stylize.base import StylizedFrame, Stylizer
from src.train.state import ModelState
from src.utils.errors import InvalidInputError
from src.wct.predictor import predict_transform
from src.wct.transform import StyleTransform, apply_transform, closed_form_transform

TRANSFORM_MODES = ("predicted", "closed-form")


class GaussianStylizer(Stylizer):
    """Zero-shot 4D stylization: one transform per style, shared by every view.

    The transform comes from statistics of the extracted Gaussian features and the extracted style features, either
    predicted by the trained MLPs or computed in closed form.
    """

    name = "4d"

    def __init__(self, state: ModelState, tile: int = TILE, transform: str = "predicted",
                 propagate: bool = True, cache: Optional[StyleCache] = None):
        super().__init__(state, tile)
        if transform not in TRANSFORM_MODES:
            raise InvalidInputError(f"Unknown transform mode '{transform}', expected one of {TRANSFORM_MODES}")
        self.mode = transform
        self.propagate = propagate
        self.cache = cache
        self.transform: Optional[StyleTransform] = None
        self.timings: Dict[str, float] = {}
        self.logger = logging.getLogger(__name__)

    def compute_transform(self, style_image: np.ndarray) -> StyleTransform:
        s = self.state
        self.style_features = self._style_features(style_image)
        g_e = s.gaussians.feature.value
        f_c = s.gaussian_extractor(g_e).value
        f_s = s.style_extractor(self.style_features).value
        mu_f = g_e.mean(axis=0)
        mu_s = self.style_features.reshape(-1, self.style_features.shape[-1]).mean(axis=0)
        if self.mode == "closed-form":
            return closed_form_transform(f_c, f_s, mu_f=mu_f, mu_s=mu_s)
        return predict_transform(f_c, f_s, s.predictor, mu_f=mu_f, mu_s=mu_s)

    def set_style(self, style_image: np.ndarray, style_key: Optional[bytes] = None):
        key = None
        if self.cache is not None and style_key is not None:
            key = StyleCache.key(style_key, self.state.digest(), self.mode, np.shape(style_image)[:2])
            cached = self.cache.get(key)
            if cached is not None:
                self.style_features = self._style_features(style_image)
                self.transform = cached
                return
        transform = self.compute_transform(style_image)
        if not transform.is_finite():
            raise InvalidInputError("Style transform contains non-finite values")
        self.transform = transform
        if key is not None:
            self.cache.put(key, transform)
        self.logger.info(f"Prepared {self.mode} style transform")

    def set_transform(self, transform: StyleTransform):
        """Use an explicit transform (e.g. a blend of several styles)."""
        self.transform = transform.detach()

    def _require_style(self):
        if self.transform is None:
            raise InvalidInputError(f"{self.name}: call set_style or set_transform before stylize")

    def transform_features(self, feature: np.ndarray) -> np.ndarray:
        """F_cs for a rendered feature map."""
        self._require_style()
        return apply_transform(feature, self.transform)

    def stylize(self, camera: int, t: float) -> StylizedFrame:
        self._require_style()
        start = time.perf_counter()
        out = self.render_view(camera, t)
        rendered = time.perf_counter()
        feature = out.feature.value
        f_cs = apply_transform(feature, self.transform)
        transformed_at = time.perf_counter()
        stylized = rev_inverse(self.state.revnet, f_cs).value
        reconstruction = rev_inverse(self.state.revnet, feature).value
        decoded = time.perf_counter()
        propagated = None
        if self.propagate:
            propagated = self.state.cspn(stylized, whiten_image(reconstruction)).value
        done = time.perf_counter()
        self.timings = {"render": rendered - start, "transform": transformed_at - rendered,
                        "decode": decoded - transformed_at, "propagate": done - decoded, "total": done - start}
        return StylizedFrame(transformed=stylized, reconstruction=reconstruction, propagated=propagated)
