import numpy as np
import pandas as pd
import pytest

from src.nets import tape as T
from src.nets.encoder import FrozenEncoder
from src.nets.revnet import RevNet, rev_forward
from src.nets.tape import Parameter
from src.scene.generator import SceneSpec, generate_scene
from src.train.config import TrainConfig
from src.train.losses import StyleStats, loss_art, loss_embed, loss_pro, psnr
from src.train.optimizer import Adam, ParamGroup, constant_lr, get_expon_lr_func
from src.train.stage1 import EmbeddingTrainer, train_stage1
from src.train.stage2 import StyleTrainer, train_stage2
from src.train.state import ModelState
from src.utils.errors import ConfigError, FormatError, InvalidInputError, NonFiniteLossError


class TestSchedules:
    def test_exponential_endpoints(self):
        lr = get_expon_lr_func(1e-2, 1e-4, 100)
        assert lr(0) == pytest.approx(1e-2)
        assert lr(100) == pytest.approx(1e-4)
        assert lr(50) == pytest.approx(1e-3)
        assert lr(500) == pytest.approx(1e-4)

    def test_constant(self):
        lr = constant_lr(3e-4)
        assert lr(0) == lr(10_000) == 3e-4


class TestAdam:
    def test_step_moves_against_gradient(self):
        p = Parameter(np.array([1.0, 2.0]))
        opt = Adam([ParamGroup("p", [p], constant_lr(0.1))])
        p.grad = np.array([1.0, -1.0])
        opt.step()
        np.testing.assert_allclose(p.value, [0.9, 2.1], atol=1e-6)

    def test_frozen_and_gradless_parameters_are_skipped(self):
        frozen = Parameter(np.ones(3), frozen=True)
        idle = Parameter(np.ones(3))
        opt = Adam([ParamGroup("g", [frozen, idle], constant_lr(0.1))])
        frozen.grad = np.ones(3)
        opt.step()
        np.testing.assert_array_equal(frozen.value, np.ones(3))
        np.testing.assert_array_equal(idle.value, np.ones(3))

    def test_unfrozen_group_restarts_bias_correction(self):
        late = Parameter(np.zeros(1), frozen=True)
        busy = Parameter(np.zeros(1))
        opt = Adam([ParamGroup("late", [late], constant_lr(0.01)), ParamGroup("busy", [busy], constant_lr(0.01))])
        for _ in range(1000):
            late.grad = np.ones(1)
            busy.grad = np.ones(1)
            opt.step()
        assert opt.groups[0].state.step == 0
        assert opt.groups[1].state.step == 1000

        late.unfreeze()
        late.grad = np.ones(1)
        opt.step()
        assert abs(late.value[0]) == pytest.approx(0.01, rel=1e-3)
        assert opt.groups[0].state.step == 1

    def test_learning_rate_follows_schedule(self):
        p = Parameter(np.zeros(1))
        opt = Adam([ParamGroup("decay", [p], get_expon_lr_func(1e-2, 1e-3, 10))])
        assert opt.update_learning_rate(10) == {"decay": pytest.approx(1e-3)}

    def test_non_finite_gradient_names_group(self):
        good, bad = Parameter(np.zeros(2)), Parameter(np.zeros(2))
        opt = Adam([ParamGroup("good", [good], constant_lr(0.1)), ParamGroup("revnet", [bad], constant_lr(0.1))])
        good.grad = np.ones(2)
        bad.grad = np.array([np.nan, 0.0])
        with pytest.raises(NonFiniteLossError) as info:
            opt.check_finite(17, 0.5)
        assert info.value.step == 17
        assert info.value.group == "revnet"

    def test_non_finite_loss(self):
        opt = Adam([ParamGroup("g", [Parameter(np.zeros(1))], constant_lr(0.1))])
        with pytest.raises(NonFiniteLossError, match="step 3"):
            opt.check_finite(3, float("inf"))


class TestLosses:
    def test_embed_loss_vanishes_on_perfect_maps(self, rng):
        revnet = RevNet(rng)
        target = rng.uniform(size=(8, 8, 3))
        feature = rev_forward(revnet, target)
        loss = loss_embed(T.Tensor(target), feature, target, revnet)
        assert float(loss.total.value) < 1e-20
        assert loss.color == 0.0

    def test_embed_loss_without_feature_term_is_color_mse(self, rng):
        revnet = RevNet(rng)
        target = rng.uniform(size=(4, 4, 3))
        color = target + 0.1
        loss = loss_embed(T.Tensor(color), T.Tensor(np.zeros((4, 4, 32))), target, revnet,
                          lambda_color=1.0, lambda_feat=0.0)
        assert float(loss.total.value) == pytest.approx(0.01)

    def test_embed_loss_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            loss_embed(T.Tensor(np.zeros((4, 4, 3))), T.Tensor(np.zeros((4, 4, 32))), np.zeros((5, 4, 3)),
                       RevNet(rng))

    def test_psnr(self):
        image = np.full((4, 4, 3), 0.5)
        assert psnr(image, image) == float("inf")
        assert psnr(image + 0.1, image) == pytest.approx(20.0)

    def test_art_loss_terms_vanish_on_their_references(self, rng):
        encoder = FrozenEncoder()
        target = rng.uniform(size=(16, 16, 3))
        style_image = rng.uniform(size=(16, 16, 3))
        style = StyleStats.of(style_image, encoder)
        assert loss_art(target, target, style, encoder).content == 0.0
        assert loss_art(style_image, target, style, encoder).style == 0.0
        mixed = loss_art(style_image, target, style, encoder, lambda_content=2.0, lambda_style=3.0)
        assert float(mixed.total.value) == pytest.approx(2.0 * mixed.content)

    def test_propagation_loss(self, rng):
        encoder = FrozenEncoder()
        image = rng.uniform(size=(16, 16, 3))
        assert float(loss_pro(image, image, encoder).value) == 0.0
        assert float(loss_pro(image * 0.5, image, encoder).value) > 0.0


class TestConfig:
    def test_defaults(self):
        config = TrainConfig.from_dict(None)
        assert config.stage1.coarse_iters == 3000
        assert config.stage1.fine_iters == 1500
        assert config.stage2.iters == 1500
        assert config.stage2.lr == 1e-3

    @pytest.mark.parametrize("data", [
        {"stage1": {"fine_iters": -2}},
        {"stage2": {"style_resolution": 32}},
        {"stage2": {"lambda_style": -1.0}},
        {"render": {"tile": 0}},
        {"paths": {"nowhere": "x"}},
        {"stage1": [1, 2]},
    ])
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict(data)


class TestModelState:
    def test_save_load_keeps_digest(self, tiny_state, tmp_path):
        tiny_state.stage = 1
        tiny_state.save(tmp_path / "model.g4ds")
        loaded = ModelState.load(tmp_path / "model.g4ds")
        assert loaded.digest() == tiny_state.digest()
        assert loaded.stage == 1
        assert len(loaded.cameras) == len(tiny_state.cameras)
        np.testing.assert_array_equal(loaded.timestamps, tiny_state.timestamps)

    def test_missing_tensor(self, tiny_state):
        tensors = tiny_state.to_tensors()
        del tensors["meta.bounds"]
        with pytest.raises(FormatError):
            ModelState.from_tensors(tensors)

    def test_module_partition_covers_every_parameter(self, tiny_state):
        parts = {**tiny_state.stage1_modules(), **tiny_state.stage2_modules()}
        count = sum(len(m.parameters()) for m in parts.values())
        assert count == len(tiny_state.parameters())


class TestStage1:
    def test_zero_iterations_keep_initialization(self, tiny_bundle):
        config = TrainConfig.from_dict({"stage1": {"coarse_iters": 0, "fine_iters": 0}})
        state = EmbeddingTrainer(tiny_bundle, config).run()
        fresh = ModelState.initialize(tiny_bundle, np.random.default_rng(config.seed))
        assert state.digest() == fresh.digest()
        assert state.stage == 1
        assert all(p.frozen for p in state.parameters())

    def test_same_seed_same_model(self, tiny_bundle, tiny_config):
        a = train_stage1(tiny_bundle, tiny_config)
        b = train_stage1(tiny_bundle, tiny_config)
        assert a.digest() == b.digest()

    def test_training_changes_stage1_parameters(self, tiny_bundle, tiny_config):
        fresh = ModelState.initialize(tiny_bundle, np.random.default_rng(tiny_config.seed))
        trained = train_stage1(tiny_bundle, tiny_config)
        assert not np.array_equal(trained.gaussians.feature.value, fresh.gaussians.feature.value)
        for name, module in fresh.stage2_modules().items():
            trained_params = trained.stage2_modules()[name].state_dict()
            for key, value in module.state_dict().items():
                np.testing.assert_array_equal(trained_params[key], value, err_msg=key)

    def test_metrics_and_checkpoint_are_written(self, tiny_bundle, tiny_config, tmp_path):
        state = train_stage1(tiny_bundle, tiny_config, metrics_path=tmp_path / "m" / "stage1.csv",
                             checkpoint_path=tmp_path / "model.g4ds")
        frame = pd.read_csv(tmp_path / "m" / "stage1.csv")
        assert len(frame) == 4
        assert list(frame["phase"]) == ["coarse", "coarse", "fine", "fine"]
        assert np.all(np.isfinite(frame["loss"]))
        assert ModelState.load(tmp_path / "model.g4ds").digest() == state.digest()

    def test_loss_decreases_on_a_single_view(self):
        bundle = generate_scene(SceneSpec(n_spheres=1, n_cameras=1, resolution=16, n_timesteps=1, n_gaussians=80),
                                seed=0)
        config = TrainConfig.from_dict({"stage1": {"coarse_iters": 10, "fine_iters": 0, "validate_every": 0},
                                        "render": {"tile": 8}})
        trainer = EmbeddingTrainer(bundle, config)
        trainer.run()
        assert trainer.held_out is None
        assert trainer.history[-1]["loss"] < trainer.history[0]["loss"]

    def test_validation_reports_psnr(self, tiny_bundle, tiny_config):
        tiny_config.stage1.validate_every = 2
        trainer = EmbeddingTrainer(tiny_bundle, tiny_config)
        trainer.run()
        frame = trainer.metrics_frame()
        assert frame["psnr_color"].notna().sum() == 2
        assert np.all(frame["psnr_color"].dropna() > 0)


class TestStage2:
    def test_stage1_parameters_are_bit_identical(self, tiny_state, tiny_bundle, tiny_config, style_images):
        before = {name: m.state_dict() for name, m in tiny_state.stage1_modules().items()}
        stage2_before = {name: m.state_dict() for name, m in tiny_state.stage2_modules().items()}
        state = train_stage2(tiny_state, tiny_bundle, style_images, tiny_config)
        for name, module in state.stage1_modules().items():
            after = module.state_dict()
            for key, value in before[name].items():
                assert np.array_equal(after[key], value), key
        changed = [name for name, m in state.stage2_modules().items()
                   if any(not np.array_equal(v, stage2_before[name][k]) for k, v in m.state_dict().items())]
        assert changed
        assert state.stage == 2

    def test_needs_two_styles(self, tiny_state, tiny_bundle, tiny_config, style_images):
        with pytest.raises(InvalidInputError):
            StyleTrainer(tiny_state, tiny_bundle, style_images[:1], tiny_config)

    def test_untrained_predictor_matches_identity_baseline(self, tiny_state, tiny_bundle, tiny_config,
                                                           style_images):
        trainer = StyleTrainer(tiny_state, tiny_bundle, style_images, tiny_config)
        scores = trainer.validate()
        assert scores["cov_predicted"] == pytest.approx(scores["cov_identity"])
        assert scores["cov_closed_form"] < scores["cov_identity"]

    def test_covariance_loss_drops_below_identity_baseline(self, tiny_state, tiny_bundle, style_images):
        config = TrainConfig.from_dict({
            "stage2": {"iters": 2, "lr": 1e-5, "lambda_content": 0.0, "lambda_style": 0.0, "validate_every": 0,
                       "style_resolution": 64},
            "render": {"tile": 8},
        })
        trainer = StyleTrainer(tiny_state, tiny_bundle, [style_images[0], style_images[0]], config)
        trainer.run()
        scores = trainer.validate()
        assert scores["cov_predicted"] < scores["cov_identity"]
        assert scores["cov_closed_form"] <= scores["cov_predicted"]

    def test_metrics_frame(self, tiny_state, tiny_bundle, tiny_config, style_images, tmp_path):
        train_stage2(tiny_state, tiny_bundle, style_images, tiny_config, metrics_path=tmp_path / "stage2.csv")
        frame = pd.read_csv(tmp_path / "stage2.csv")
        assert len(frame) == 2
        for column in ("loss_cov", "loss_content", "loss_style", "loss_pro"):
            assert np.all(np.isfinite(frame[column]))
