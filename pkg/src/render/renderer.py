import logging

from src.render.heads import DecoderHeads, RenderOutput, decode_heads
from src.render.projection import project_gaussians
from src.render.rasterizer import TILE, composite, composite_reference
from src.scene.camera import Camera
from src.scene.deformation import DeformationField, deform
from src.scene.gaussians import GaussianCloud

logger = logging.getLogger(__name__)


def render_embedding(gaussians: GaussianCloud, field: DeformationField, camera: Camera, t: float,
                     static: bool = False, tile: int = TILE, reference: bool = False):
    """Deform, project and composite; returns the FeatureMap E."""
    cloud = deform(gaussians, field, t, static=static)
    projected = project_gaussians(cloud, camera)
    logger.debug(f"Rendering t={t:.3f}: {len(projected)}/{len(cloud)} splats survive culling")
    if reference:
        return composite_reference(projected, camera.width, camera.height)
    return composite(projected, camera.width, camera.height, tile=tile)


def render(gaussians: GaussianCloud, field: DeformationField, camera: Camera, t: float,
           heads: DecoderHeads, static: bool = False, tile: int = TILE, reference: bool = False) -> RenderOutput:
    """Full pipeline: deform, project, composite and decode both heads.

    ``reference`` switches to the per-pixel compositing loop, which yields the
    same pixels but records no gradients.
    """
    embedding = render_embedding(gaussians, field, camera, t, static=static, tile=tile, reference=reference)
    return decode_heads(embedding, heads)
