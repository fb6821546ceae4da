"""Scene bundle persistence: one JSON document plus PPM ground truth."""

import json
import logging
from pathlib import Path
from typing import Dict, Union

import numpy as np

from src.formats.ppm import read_ppm, write_ppm
from src.scene.analytic import AnalyticScene
from src.scene.camera import Camera
from src.scene.deformation import DeformationField
from src.scene.gaussians import GaussianCloud
from src.scene.generator import SceneBundle, SceneSpec
from src.utils.errors import FormatError, UnsupportedVersionError, WrongMagicError

logger = logging.getLogger(__name__)

FORMAT = "g4ds-scene"
VERSION = 1


def _array(value: np.ndarray) -> Dict:
    value = np.asarray(value, dtype=np.float64)
    return {"shape": list(value.shape), "data": value.reshape(-1).tolist()}


def _unarray(data: Dict) -> np.ndarray:
    return np.array(data["data"], dtype=np.float64).reshape(data["shape"])


def image_name(camera: int, timestep: int) -> str:
    return f"images/cam{camera:02d}_t{timestep:03d}.ppm"


def scene_document(bundle: SceneBundle) -> Dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "bundle_id": bundle.bundle_id,
        "seed": int(bundle.seed),
        "spec": bundle.spec.to_dict(),
        "held_out_camera": bundle.held_out_camera,
        "cameras": [cam.to_dict() for cam in bundle.cameras],
        "timestamps": bundle.timestamps.tolist(),
        "analytic": bundle.analytic.to_dict(),
        "gaussians": {name: _array(p.value) for name, p in bundle.gaussians.named_parameters()},
        "deformation": {
            "bounds": [b.tolist() for b in bundle.deformation.bounds],
            "params": {name: _array(p.value) for name, p in bundle.deformation.named_parameters()},
        },
        "images": [
            {"camera": ci, "timestep": ti, "path": image_name(ci, ti)}
            for (ci, ti) in sorted(bundle.ground_truth)
        ],
    }


def save_scene(bundle: SceneBundle, path: Union[str, Path]):
    """Write ``scene.json`` (at ``path``) and its images next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = scene_document(bundle)
    for entry in document["images"]:
        key = (entry["camera"], entry["timestep"])
        write_ppm(path.parent / entry["path"], bundle.ground_truth[key])
    path.write_text(json.dumps(document, indent=1), encoding="utf-8")
    logger.info(f"Saved scene {bundle.bundle_id} to {path} ({len(document['images'])} images)")


def load_scene(path: Union[str, Path]) -> SceneBundle:
    """Read a bundle written by ``save_scene``.

    Raises:
        WrongMagicError: the document is not a scene file
        UnsupportedVersionError: unknown version
        FormatError: missing or malformed fields
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"Scene file is not valid JSON: {e.msg}", offset=e.pos)
    if not isinstance(document, dict) or document.get("format") != FORMAT:
        raise WrongMagicError(f"Field 'format' must be '{FORMAT}'")
    if document.get("version") != VERSION:
        raise UnsupportedVersionError(f"Field 'version' is {document.get('version')!r}, expected {VERSION}")
    try:
        spec = SceneSpec.from_dict(document["spec"])
        cameras = [Camera.from_dict(c) for c in document["cameras"]]
        params = {name: _unarray(v) for name, v in document["gaussians"].items()}
        gaussians = GaussianCloud(params["center"], params["log_scale"], params["rotation"],
                                  params["opacity_logit"], params["feature"])
        bounds = tuple(np.array(b) for b in document["deformation"]["bounds"])
        deformation = DeformationField(bounds, np.random.default_rng(0))
        deformation.load_state_dict({k: _unarray(v) for k, v in document["deformation"]["params"].items()})
        ground_truth = {}
        for entry in document["images"]:
            ground_truth[(int(entry["camera"]), int(entry["timestep"]))] = read_ppm(path.parent / entry["path"])
        analytic = AnalyticScene.from_dict(document["analytic"])
    except KeyError as e:
        raise FormatError(f"Scene file is missing field {str(e)}")
    return SceneBundle(spec=spec, seed=int(document["seed"]), gaussians=gaussians, deformation=deformation,
                       cameras=cameras, timestamps=np.array(document["timestamps"]),
                       ground_truth=ground_truth, analytic=analytic, bundle_id=document["bundle_id"],
                       held_out_camera=document.get("held_out_camera"))
