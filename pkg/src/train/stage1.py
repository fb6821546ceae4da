import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.nets import tape as T
from src.nets.revnet import rev_inverse, to_display
from src.render.renderer import render
from src.scene.generator import SceneBundle
from src.train.config import TrainConfig
from src.train.losses import loss_embed, psnr
from src.train.optimizer import Adam, ParamGroup, constant_lr, get_expon_lr_func
from src.train.state import ModelState


class EmbeddingTrainer:
    """Stage 1: fit embedded Gaussians, deformation, reversible net and heads.

    A coarse phase renders the canonical (static) Gaussians with the
    deformation field frozen; the fine phase unfreezes it. Every step draws
    one (camera, timestamp) from the training cameras.
    """

    def __init__(self, bundle: SceneBundle, config: TrainConfig, state: Optional[ModelState] = None,
                 checkpoint_path: Optional[str] = None):
        self.bundle = bundle
        self.config = config
        self.cfg = config.stage1
        self.rng = np.random.default_rng(config.seed)
        self.state = state or ModelState.initialize(bundle, self.rng, dtype=config.render.numpy_dtype,
                                                    cspn_iterations=config.stage2.cspn_iterations)
        self.checkpoint_path = checkpoint_path
        held_out = self.cfg.held_out_camera if self.cfg.held_out_camera is not None else bundle.held_out_camera
        self.held_out = held_out
        cams = [i for i in range(len(bundle.cameras)) if i != held_out]
        self.train_cameras = cams or list(range(len(bundle.cameras)))
        self.history: List[Dict] = []
        self.logger = logging.getLogger(__name__)

    def _build_optimizer(self) -> Adam:
        total = self.cfg.coarse_iters + self.cfg.fine_iters
        decay = get_expon_lr_func(self.cfg.lr_gaussians, self.cfg.lr_gaussians_final, total)
        s = self.state
        return Adam([
            ParamGroup("gaussians", s.gaussians.parameters(), decay),
            ParamGroup("deformation", s.deformation.parameters(), decay),
            ParamGroup("revnet", s.revnet.parameters(), constant_lr(self.cfg.lr_networks)),
            ParamGroup("heads", s.heads.parameters(), constant_lr(self.cfg.lr_networks)),
        ])

    def _set_trainable(self, static: bool):
        for module in self.state.stage2_modules().values():
            module.freeze()
        for name, module in self.state.stage1_modules().items():
            if name == "deformation" and static:
                module.freeze()
            else:
                module.unfreeze()

    def step(self, optimizer: Adam, iteration: int, static: bool) -> Dict:
        ci = int(self.rng.choice(self.train_cameras))
        ti = int(self.rng.integers(len(self.bundle.timestamps)))
        t = float(self.bundle.timestamps[ti])
        target = self.bundle.ground_truth[(ci, ti)]
        s = self.state
        optimizer.zero_grad()
        optimizer.update_learning_rate(iteration)
        with T.Tape() as tape:
            out = render(s.gaussians, s.deformation, s.cameras[ci], t, s.heads, static=static,
                         tile=self.config.render.tile)
            loss = loss_embed(out.color, out.feature, target, s.revnet,
                              self.cfg.lambda_embed_color, self.cfg.lambda_embed_feat)
            tape.backward(loss.total)
        value = float(loss.total.value)
        optimizer.check_finite(iteration, value)
        optimizer.step()
        s.gaussians.normalize_rotations()
        self.logger.debug(f"step {iteration} cam={ci} t={t:.3f} loss={value:.6f}")
        return {"step": iteration, "phase": "coarse" if static else "fine", "camera": ci, "t": t,
                "loss": value, "loss_color": loss.color, "loss_feat": loss.feature,
                "lr_gaussians": optimizer.groups[0].lr}

    def validate(self, static: bool) -> Tuple[float, float]:
        """Mean PSNR of C and revnet.reverse(F) on the held-out camera over all timestamps."""
        cam_index = self.held_out if self.held_out is not None else self.train_cameras[0]
        s = self.state
        color_scores, feat_scores = [], []
        for ti, t in enumerate(self.bundle.timestamps):
            out = render(s.gaussians, s.deformation, s.cameras[cam_index], float(t), s.heads,
                         static=static, tile=self.config.render.tile)
            target = self.bundle.ground_truth[(cam_index, ti)]
            color_scores.append(psnr(out.color.value, target))
            feat_scores.append(psnr(to_display(rev_inverse(s.revnet, out.feature)), target))
        return float(np.mean(color_scores)), float(np.mean(feat_scores))

    def run(self) -> ModelState:
        optimizer = self._build_optimizer()
        phases = [("coarse", True, self.cfg.coarse_iters), ("fine", False, self.cfg.fine_iters)]
        total = self.cfg.coarse_iters + self.cfg.fine_iters
        self.logger.info(f"Stage 1 on scene {self.bundle.bundle_id}: {self.cfg.coarse_iters} coarse + "
                         f"{self.cfg.fine_iters} fine steps, held-out camera {self.held_out}")
        iteration = 0
        with tqdm(total=total, desc="stage1", disable=total == 0) as bar:
            for phase, static, iters in phases:
                if iters == 0:
                    continue
                self._set_trainable(static)
                self.logger.info(f"Entering {phase} phase ({iters} steps)")
                for _ in range(iters):
                    record = self.step(optimizer, iteration, static)
                    iteration += 1
                    if self.cfg.validate_every and (iteration % self.cfg.validate_every == 0 or iteration == total):
                        record["psnr_color"], record["psnr_feat"] = self.validate(static)
                        self.logger.info(
                            f"[{phase}] step {iteration}: loss={record['loss']:.5f} "
                            f"(color {record['loss_color']:.5f}, feat {record['loss_feat']:.5f}) "
                            f"PSNR C={record['psnr_color']:.2f} dB, reversed F={record['psnr_feat']:.2f} dB"
                        )
                    self.history.append(record)
                    if self.cfg.checkpoint_every and self.checkpoint_path and iteration % self.cfg.checkpoint_every == 0:
                        self.state.save(self.checkpoint_path)
                    bar.update(1)
                    bar.set_postfix(loss=f"{record['loss']:.4f}")
        self.state.stage = max(self.state.stage, 1)
        self.state.freeze()
        return self.state

    def metrics_frame(self) -> pd.DataFrame:
        columns = ["step", "phase", "camera", "t", "loss", "loss_color", "loss_feat", "lr_gaussians",
                   "psnr_color", "psnr_feat"]
        return pd.DataFrame(self.history, columns=columns)

    def write_metrics(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.metrics_frame().to_csv(path, index=False, float_format="%.9g")
        self.logger.info(f"Wrote stage-1 metrics to {path}")


def train_stage1(bundle: SceneBundle, config: TrainConfig, metrics_path: Optional[str] = None,
                 checkpoint_path: Optional[str] = None) -> ModelState:
    """Run stage 1 and return the trained state (also written when paths are given)."""
    trainer = EmbeddingTrainer(bundle, config, checkpoint_path=checkpoint_path)
    state = trainer.run()
    if metrics_path:
        trainer.write_metrics(metrics_path)
    if checkpoint_path:
        state.save(checkpoint_path)
    return state
