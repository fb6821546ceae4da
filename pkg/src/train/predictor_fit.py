"""Fit the transform predictor directly on random covariance pairs.

Stage 2 trains the predictor through the extractors, so a weak predictor is
hard to tell apart from weak features. This routine isolates it: content and
style covariances are drawn as random SPD matrices, and the predictor learns
T = T_s T_c so that T cov_c Tᵀ matches cov_s. Held-out pairs score it against
T = I and against the closed-form whitening/coloring transform.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from tabulate import tabulate
from tqdm import tqdm

from src.nets import tape as T
from src.train.optimizer import Adam, ParamGroup, constant_lr
from src.utils.errors import InvalidInputError
from src.wct.linalg import eigh
from src.wct.predictor import TransformPredictor
from src.wct.transform import FEATURE_DIM, covariance_loss_from_cov

CovPair = Tuple[np.ndarray, np.ndarray]

PASS_RATIO = 0.1
CLOSED_FORM_TOL = 1e-12


def random_covariance(rng: np.random.Generator, dim: int, scale_range: Tuple[float, float],
                      spread: float = 0.2) -> np.ndarray:
    """SPD matrix A Aᵀ with A = s (I + spread G / sqrt(dim)) and s drawn from ``scale_range``."""
    s = rng.uniform(*scale_range)
    a = s * (np.eye(dim) + spread * rng.standard_normal((dim, dim)) / np.sqrt(dim))
    return a @ a.T


def sample_pairs(rng: np.random.Generator, n: int, dim: int, content_scale=(1.5, 2.5),
                 style_scale=(0.3, 0.7)) -> List[CovPair]:
    return [(random_covariance(rng, dim, content_scale), random_covariance(rng, dim, style_scale))
            for _ in range(n)]


@dataclass
class PredictorFitReport:
    steps: int
    dim: int
    train_loss: float
    predicted: float
    identity: float
    closed_form: float

    @property
    def ratio(self) -> float:
        """Held-out predicted loss as a fraction of the T = I loss."""
        return self.predicted / self.identity if self.identity > 0 else float("inf")

    @property
    def passed(self) -> bool:
        return self.ratio < PASS_RATIO and self.predicted >= self.closed_form - CLOSED_FORM_TOL

    def to_dict(self) -> Dict:
        return {"steps": self.steps, "dim": self.dim, "train_loss": self.train_loss,
                "predicted": self.predicted, "identity": self.identity, "closed_form": self.closed_form,
                "ratio": self.ratio, "passed": self.passed}

    def __str__(self) -> str:
        rows = [
            ["Predicted", f"{self.predicted:.6f}"],
            ["Identity (T = I)", f"{self.identity:.6f}"],
            ["Closed form", f"{self.closed_form:.3e}"],
            ["Predicted / identity", f"{self.ratio:.4f}"],
        ]
        status = "PASS" if self.passed else "FAIL"
        header = f"Predictor fit: {self.steps} steps at D={self.dim}, final train loss {self.train_loss:.6f} [{status}]"
        return header + "\n" + tabulate(rows, headers=["Transform", "Held-out covariance loss"], tablefmt="grid")


class PredictorFitter:
    """Trains a ``TransformPredictor`` on freshly sampled covariance pairs each step."""

    def __init__(self, dim: int = FEATURE_DIM, hidden: int = 512, lr: float = 1e-3, batch: int = 8,
                 seed: int = 0, predictor: Optional[TransformPredictor] = None):
        if dim < 1 or hidden < 1 or batch < 1:
            raise InvalidInputError(f"dim, hidden and batch must be positive, got {dim}, {hidden}, {batch}")
        if not lr > 0:
            raise InvalidInputError(f"learning rate must be positive, got {lr}")
        self.dim = dim
        self.lr = lr
        self.batch = batch
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.predictor = predictor or TransformPredictor(self.rng, dim=dim, hidden=hidden)
        self.history: List[float] = []
        self.logger = logging.getLogger(__name__)

    def pair_loss(self, cov_c: np.ndarray, cov_s: np.ndarray) -> T.Tensor:
        t = T.matmul(self.predictor.mlp_s(cov_s), self.predictor.mlp_c(cov_c))
        cov_cs = T.matmul(T.matmul(t, cov_c), T.swap_last(t))
        return covariance_loss_from_cov(cov_cs, cov_s, n_f=self.dim)

    def evaluate(self, pairs: List[CovPair]) -> Tuple[float, float, float]:
        """Mean covariance loss of the predicted, identity and closed-form transforms."""
        scores = []
        for cov_c, cov_s in pairs:
            closed = eigh(cov_s).power(0.5) @ eigh(cov_c).power(-0.5)
            scores.append((
                float(self.pair_loss(cov_c, cov_s).value),
                float(covariance_loss_from_cov(cov_c, cov_s, n_f=self.dim).value),
                float(covariance_loss_from_cov(closed @ cov_c @ closed.T, cov_s, n_f=self.dim).value),
            ))
        predicted, identity, closed_form = np.mean(scores, axis=0)
        return float(predicted), float(identity), float(closed_form)

    def fit(self, steps: int, held_out: int = 64) -> PredictorFitReport:
        if steps < 0 or held_out < 1:
            raise InvalidInputError(f"steps must be >= 0 and held_out >= 1, got {steps}, {held_out}")
        self.predictor.unfreeze()
        optimizer = Adam([ParamGroup("predictor", self.predictor.parameters(), constant_lr(self.lr))])
        self.logger.info(f"Fitting predictor at D={self.dim}: {steps} steps, batch {self.batch}")
        with tqdm(total=steps, desc="predictor", disable=steps == 0) as bar:
            for step in range(steps):
                pairs = sample_pairs(self.rng, self.batch, self.dim)
                optimizer.zero_grad()
                with T.Tape() as tape:
                    losses = [self.pair_loss(cov_c, cov_s) for cov_c, cov_s in pairs]
                    total = T.div(T.tsum(T.stack(losses)), float(self.batch))
                    tape.backward(total)
                value = float(total.value)
                optimizer.check_finite(step, value)
                optimizer.step()
                self.history.append(value)
                bar.update(1)
                bar.set_postfix(loss=f"{value:.4f}")
        self.predictor.freeze()

        predicted, identity, closed_form = self.evaluate(
            sample_pairs(np.random.default_rng(self.seed + 1), held_out, self.dim))
        report = PredictorFitReport(steps=steps, dim=self.dim,
                                    train_loss=self.history[-1] if self.history else float("nan"),
                                    predicted=predicted, identity=identity, closed_form=closed_form)
        self.logger.info(f"Predictor fit: held-out ratio {report.ratio:.4f} ({'pass' if report.passed else 'fail'})")
        return report
