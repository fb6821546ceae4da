import numpy as np
import pytest

from src.scene.generator import SceneSpec, generate_scene
from src.train.config import TrainConfig
from src.train.state import ModelState

TINY_SPEC = dict(n_spheres=1, n_cameras=4, resolution=16, n_timesteps=2, n_gaussians=80)


@pytest.fixture(autouse=True)
def _log_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("G4DS_LOG_DIR", str(tmp_path / "logs"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_bundle():
    """Four cameras, two timestamps, 16x16 pixels and 80 Gaussians."""
    return generate_scene(SceneSpec(**TINY_SPEC), seed=0)


@pytest.fixture
def tiny_state(tiny_bundle):
    return ModelState.initialize(tiny_bundle, np.random.default_rng(0))


@pytest.fixture
def tiny_config():
    config = TrainConfig.from_dict({
        "stage1": {"coarse_iters": 2, "fine_iters": 2, "validate_every": 0},
        "stage2": {"iters": 2, "validate_every": 0, "style_resolution": 64},
        "render": {"tile": 8, "resolution": 16},
    })
    return config


@pytest.fixture
def style_images():
    gen = np.random.default_rng(7)
    ys, xs = np.meshgrid(np.linspace(0, 1, 64), np.linspace(0, 1, 64), indexing="ij")
    stripes = np.stack([0.5 + 0.5 * np.sin(12 * xs), 0.3 + 0.2 * ys, 0.5 + 0.4 * np.cos(9 * ys)], axis=-1)
    noise = gen.uniform(0.0, 1.0, size=(64, 64, 3))
    return [stripes, noise]
