import json

import pandas as pd
import pytest

from src.formats.flow_io import read_flow
from src.formats.ppm import read_ppm, write_ppm
from src.main import main
from src.train.state import ModelState

RUN_CONFIG = """\
seed: 0
stage1:
  coarse_iters: {coarse}
  fine_iters: {fine}
  validate_every: 0
stage2:
  iters: 1
  validate_every: 0
  style_resolution: 64
render:
  tile: 8
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def write_config(path, coarse=0, fine=0):
    path.write_text(RUN_CONFIG.format(coarse=coarse, fine=fine), encoding="utf-8")
    return str(path)


def make_scene(workdir):
    scene = workdir / "scene" / "scene.json"
    code = main(["gen-scene", "--out", str(scene), "--cameras", "4", "--timesteps", "2",
                 "--resolution", "16", "--gaussians", "80"])
    assert code == 0
    return scene


def make_styles(workdir, style_images):
    styles = workdir / "styles"
    write_ppm(styles / "noise.ppm", style_images[1])
    write_ppm(styles / "stripes.ppm", style_images[0])
    return styles


def train_both(workdir, style_images):
    scene = make_scene(workdir)
    config = write_config(workdir / "run.yaml", coarse=1, fine=1)
    ckpt = workdir / "model.g4ds"
    assert main(["--config", config, "train-embed", "--scene", str(scene), "--out", str(ckpt)]) == 0
    styles = make_styles(workdir, style_images)
    assert main(["--config", config, "train-style", "--checkpoint", str(ckpt), "--scene", str(scene),
                 "--styles", str(styles)]) == 0
    return scene, config, ckpt, styles


class TestExitCodes:
    def test_gradcheck_success(self, workdir, capsys):
        assert main(["gradcheck", "--component", "mlp", "--trials", "3"]) == 0
        assert "mlp" in capsys.readouterr().out

    def test_fit_predictor(self, workdir, capsys):
        small = ["--dim", "4", "--hidden", "32", "--lr", "2e-3", "--batch", "4", "--held-out", "32"]
        assert main(["fit-predictor", "--steps", "200"] + small) == 0
        assert "PASS" in capsys.readouterr().out
        assert main(["fit-predictor", "--steps", "0"] + small) == 2
        assert main(["fit-predictor", "--batch", "0"]) == 1

    @pytest.mark.parametrize("argv", [
        [],
        ["render"],
        ["gradcheck", "--trials", "many"],
        ["frobnicate"],
        ["gen-scene", "--out", "x.json", "--layout", "spiral"],
    ])
    def test_usage_errors(self, workdir, argv):
        assert main(argv) == 1

    def test_missing_checkpoint(self, workdir):
        assert main(["render", "--checkpoint", str(workdir / "absent.g4ds"), "--out", "x.ppm"]) == 2

    def test_bad_scene_spec(self, workdir):
        assert main(["gen-scene", "--out", str(workdir / "s.json"), "--resolution", "9"]) == 2

    def test_bad_run_config(self, workdir):
        (workdir / "bad.yaml").write_text("stage1: {coarse_iterz: 3}\n", encoding="utf-8")
        assert main(["--config", str(workdir / "bad.yaml"), "gradcheck", "--component", "linear"]) == 2


class TestPipeline:
    def test_scene_layout_on_disk(self, workdir):
        scene = make_scene(workdir)
        document = json.loads(scene.read_text(encoding="utf-8"))
        assert len(document["cameras"]) == 4
        assert (scene.parent / "images" / "cam03_t001.ppm").exists()
        assert read_ppm(scene.parent / "images" / "cam00_t000.ppm").shape == (16, 16, 3)

    def test_render_is_byte_identical(self, workdir):
        scene = make_scene(workdir)
        config = write_config(workdir / "run.yaml")
        ckpt = workdir / "model.g4ds"
        assert main(["--config", config, "train-embed", "--scene", str(scene), "--out", str(ckpt)]) == 0
        assert ModelState.load(ckpt).stage == 1
        assert (workdir / "model.g4ds.stage1.csv").exists()
        for name in ("a.ppm", "b.ppm"):
            assert main(["--config", config, "render", "--checkpoint", str(ckpt), "--camera", "1",
                         "--t", "0.5", "--out", str(workdir / name)]) == 0
        assert (workdir / "a.ppm").read_bytes() == (workdir / "b.ppm").read_bytes()

    def test_render_branches_and_reference(self, workdir):
        scene = make_scene(workdir)
        config = write_config(workdir / "run.yaml")
        ckpt = workdir / "model.g4ds"
        main(["--config", config, "train-embed", "--scene", str(scene), "--out", str(ckpt)])
        assert main(["--config", config, "render", "--checkpoint", str(ckpt), "--out", "tile.ppm"]) == 0
        assert main(["--config", config, "render", "--checkpoint", str(ckpt), "--out", "ref.ppm",
                     "--reference"]) == 0
        assert (workdir / "tile.ppm").read_bytes() == (workdir / "ref.ppm").read_bytes()
        assert main(["--config", config, "render", "--checkpoint", str(ckpt), "--out", "feat.ppm",
                     "--branch", "feature", "--png"]) == 0
        assert (workdir / "feat.png").exists()
        assert main(["--config", config, "render", "--checkpoint", str(ckpt), "--out", "x.ppm",
                     "--camera", "9"]) == 1

    def test_style_commands(self, workdir, style_images, capsys):
        scene, config, ckpt, styles = train_both(workdir, style_images)
        assert ModelState.load(ckpt).stage == 2
        assert len(pd.read_csv(f"{ckpt}.stage2.csv")) == 1

        assert main(["--config", config, "stylize", "--checkpoint", str(ckpt), "--style",
                     str(styles / "noise.ppm"), "--camera", "2", "--t", "1.0", "--out", "styl.ppm",
                     "--style-cache", "cache"]) == 0
        assert read_ppm(workdir / "styl.ppm").shape == (16, 16, 3)
        assert len(list((workdir / "cache").iterdir())) == 1

        assert main(["--config", config, "interpolate", "--checkpoint", str(ckpt), "--styles",
                     str(styles / "noise.ppm"), str(styles / "stripes.ppm"), "--weights", "0.25", "0.75",
                     "--out-dir", "blend", "--cameras", "0", "3"]) == 0
        assert sorted(p.name for p in (workdir / "blend").iterdir()) == ["view_00.ppm", "view_03.ppm"]
        assert main(["--config", config, "interpolate", "--checkpoint", str(ckpt), "--styles",
                     str(styles / "noise.ppm"), "--weights", "0.5", "0.5", "--out-dir", "blend"]) == 1
        assert main(["--config", config, "interpolate", "--checkpoint", str(ckpt), "--styles",
                     str(styles / "noise.ppm"), str(styles / "stripes.ppm"), "--weights", "0.6", "0.6",
                     "--out-dir", "blend"]) == 2

        assert main(["--config", config, "eval-consistency", "--checkpoint", str(ckpt), "--scene", str(scene),
                     "--style", str(styles / "noise.ppm"), "--out", "eval/pairs.csv", "--flow-dir", "flows"]) == 0
        pairs = pd.read_csv(workdir / "eval" / "pairs.csv")
        assert len(pairs) == (9 + 3) * 2
        assert set(pairs["kind"]) == {"cross_time", "cross_camera"}
        summary = json.loads((workdir / "eval" / "pairs.json").read_text(encoding="utf-8"))
        assert summary["pairs"] == 24
        flows = sorted(p.name for p in (workdir / "flows").iterdir())
        assert len(flows) == 12
        assert flows[:2] == ["cam00_t000-cam01_t000.g4df", "cam00_t000-cam01_t001.g4df"]
        assert read_flow(workdir / "flows" / flows[0]).flow.shape == (16, 16, 2)

        assert main(["--config", config, "benchmark", "--checkpoint", str(ckpt), "--style",
                     str(styles / "noise.ppm"), "--repeats", "2"]) == 0
        assert "Stylization timing" in capsys.readouterr().out
