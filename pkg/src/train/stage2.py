import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.nets import tape as T
from src.nets.encoder import FrozenEncoder
from src.nets.revnet import rev_forward, rev_inverse
from src.nets.whiten import whiten_image
from src.render.renderer import render
from src.scene.generator import SceneBundle
from src.train.config import TrainConfig
from src.train.losses import StyleStats, loss_art, loss_pro
from src.train.optimizer import Adam, ParamGroup, constant_lr
from src.train.state import ModelState
from src.utils.errors import InvalidInputError
from src.wct.linalg import covariance
from src.wct.predictor import predict_transform
from src.wct.transform import apply_transform, closed_form_transform, covariance_loss_from_cov

MIN_STYLES = 2


class StyleCorpus:
    """Style images with their reversible features and encoder statistics."""

    def __init__(self, images: Sequence[np.ndarray], state: ModelState, encoder: FrozenEncoder):
        if len(images) < MIN_STYLES:
            raise InvalidInputError(f"Stage 2 needs at least {MIN_STYLES} style images, got {len(images)}")
        dtype = state.gaussians.center.dtype
        self.images = [np.asarray(img, dtype=dtype) for img in images]
        self.features = [rev_forward(state.revnet, img).value for img in self.images]
        self.stats = [StyleStats.of(img, encoder) for img in self.images]

    def __len__(self) -> int:
        return len(self.images)


def transform_losses(state: ModelState, style_features: np.ndarray) -> Tuple[float, float, float]:
    """Covariance loss of the predicted transform, the T = I baseline and the closed form."""
    g_e = state.gaussians.feature.value
    f_c = state.gaussian_extractor(g_e).value
    f_s = state.style_extractor(style_features).value
    cov_c = covariance(f_c)
    cov_s = covariance(f_s)
    predicted = predict_transform(f_c, f_s, state.predictor).combined()
    closed = closed_form_transform(f_c, f_s).combined()

    def loss(t):
        return float(covariance_loss_from_cov(t @ cov_c @ t.T, cov_s).value)

    return loss(predicted), loss(np.eye(cov_c.shape[0])), loss(closed)


class StyleTrainer:
    """Stage 2: train the extractors, transform predictors and CSPN.

    Stage-1 parameters stay frozen; their renders are cached per view. The
    CSPN sees detached stylizations so its loss reaches only its own weights.
    """

    def __init__(self, state: ModelState, bundle: SceneBundle, styles: Sequence[np.ndarray],
                 config: TrainConfig, checkpoint_path: Optional[str] = None):
        self.state = state
        self.bundle = bundle
        self.config = config
        self.cfg = config.stage2
        self.rng = np.random.default_rng(config.seed + 1)
        self.encoder = FrozenEncoder(dtype=state.gaussians.center.dtype)
        self.state.freeze()
        self.corpus = StyleCorpus(styles, state, self.encoder)
        self.checkpoint_path = checkpoint_path
        self.history: List[Dict] = []
        self._renders: Dict[Tuple[int, int], Tuple[np.ndarray, np.ndarray]] = {}
        self.logger = logging.getLogger(__name__)

    def _build_optimizer(self) -> Adam:
        s = self.state
        lr = constant_lr(self.cfg.lr)
        return Adam([
            ParamGroup("extractors", s.gaussian_extractor.parameters() + s.style_extractor.parameters(), lr),
            ParamGroup("predictor", s.predictor.parameters(), lr),
            ParamGroup("cspn", s.cspn.parameters(), lr),
        ])

    def view(self, ci: int, ti: int) -> Tuple[np.ndarray, np.ndarray]:
        """Cached rendered feature map F and its reconstruction revnet.reverse(F)."""
        key = (ci, ti)
        if key not in self._renders:
            s = self.state
            out = render(s.gaussians, s.deformation, s.cameras[ci], float(self.bundle.timestamps[ti]), s.heads,
                         tile=self.config.render.tile)
            feature = out.feature.value
            self._renders[key] = (feature, rev_inverse(s.revnet, feature).value)
        return self._renders[key]

    def step(self, optimizer: Adam, iteration: int) -> Dict:
        s = self.state
        k = int(self.rng.integers(len(self.corpus)))
        ci = int(self.rng.integers(len(s.cameras)))
        ti = int(self.rng.integers(len(self.bundle.timestamps)))
        feature, recon = self.view(ci, ti)
        target = self.bundle.ground_truth[(ci, ti)]
        style_features = self.corpus.features[k]
        g_e = s.gaussians.feature.value
        optimizer.zero_grad()
        with T.Tape() as tape:
            f_c = s.gaussian_extractor(g_e)
            f_s = s.style_extractor(style_features)
            tr = predict_transform(f_c, f_s, s.predictor, mu_f=g_e.mean(axis=0),
                                   mu_s=style_features.reshape(-1, style_features.shape[-1]).mean(axis=0))
            combined = tr.combined()
            cov_cs = T.matmul(T.matmul(combined, covariance(f_c)), T.swap_last(combined))
            l_cov = covariance_loss_from_cov(cov_cs, covariance(f_s))
            stylized = rev_inverse(s.revnet, apply_transform(feature, tr))
            art = loss_art(stylized, target, self.corpus.stats[k], self.encoder,
                           self.cfg.lambda_content, self.cfg.lambda_style)
            guidance = whiten_image(recon)
            propagated = s.cspn(stylized.detach(), guidance, iterations=self.cfg.cspn_iterations)
            l_pro = loss_pro(propagated, recon, self.encoder)
            total = T.add(T.add(T.mul(self.cfg.lambda_covariance, l_cov), art.total), l_pro)
            tape.backward(total)
        value = float(total.value)
        optimizer.check_finite(iteration, value)
        optimizer.step()
        self.logger.debug(f"step {iteration} style={k} cam={ci} t_index={ti} loss={value:.6f}")
        return {"step": iteration, "style": k, "camera": ci, "t_index": ti, "loss": value,
                "loss_cov": float(l_cov.value), "loss_content": art.content, "loss_style": art.style,
                "loss_pro": float(l_pro.value)}

    def validate(self) -> Dict[str, float]:
        """Covariance loss per style for predicted, identity and closed-form transforms."""
        scores = np.array([transform_losses(self.state, f) for f in self.corpus.features])
        return {"cov_predicted": float(scores[:, 0].mean()), "cov_identity": float(scores[:, 1].mean()),
                "cov_closed_form": float(scores[:, 2].mean())}

    def run(self) -> ModelState:
        optimizer = self._build_optimizer()
        for module in self.state.stage2_modules().values():
            module.unfreeze()
        iters = self.cfg.iters
        self.logger.info(f"Stage 2 with {len(self.corpus)} styles: {iters} steps")
        with tqdm(total=iters, desc="stage2", disable=iters == 0) as bar:
            for iteration in range(iters):
                record = self.step(optimizer, iteration)
                if self.cfg.validate_every and ((iteration + 1) % self.cfg.validate_every == 0 or iteration + 1 == iters):
                    record.update(self.validate())
                    self.logger.info(
                        f"step {iteration + 1}: loss={record['loss']:.5f} covariance loss "
                        f"predicted={record['cov_predicted']:.5f} identity={record['cov_identity']:.5f} "
                        f"closed-form={record['cov_closed_form']:.3e}"
                    )
                self.history.append(record)
                if self.cfg.checkpoint_every and self.checkpoint_path and (iteration + 1) % self.cfg.checkpoint_every == 0:
                    self.state.save(self.checkpoint_path)
                bar.update(1)
                bar.set_postfix(loss=f"{record['loss']:.4f}")
        self.state.freeze()
        self.state.stage = 2
        return self.state

    def metrics_frame(self) -> pd.DataFrame:
        columns = ["step", "style", "camera", "t_index", "loss", "loss_cov", "loss_content", "loss_style",
                   "loss_pro", "cov_predicted", "cov_identity", "cov_closed_form"]
        return pd.DataFrame(self.history, columns=columns)

    def write_metrics(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.metrics_frame().to_csv(path, index=False, float_format="%.9g")
        self.logger.info(f"Wrote stage-2 metrics to {path}")


def train_stage2(state: ModelState, bundle: SceneBundle, styles: Sequence[np.ndarray], config: TrainConfig,
                 metrics_path: Optional[str] = None, checkpoint_path: Optional[str] = None) -> ModelState:
    trainer = StyleTrainer(state, bundle, styles, config, checkpoint_path=checkpoint_path)
    state = trainer.run()
    if metrics_path:
        trainer.write_metrics(metrics_path)
    if checkpoint_path:
        state.save(checkpoint_path)
    return state
