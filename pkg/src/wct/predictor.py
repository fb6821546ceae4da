import logging

import numpy as np

from src.nets import tape as T
from src.nets.layers import MLP, Module
from src.wct.linalg import covariance
from src.wct.transform import FEATURE_DIM, StyleTransform


class CovariancePredictor(Module):
    """Maps a flattened covariance to a D x D matrix, I + reshape(MLP(cov)).

    The output layer starts at zero so an untrained predictor returns I.
    """

    def __init__(self, rng: np.random.Generator, dim: int = FEATURE_DIM, hidden: int = 512,
                 name: str = "predictor"):
        self.dim = dim
        self.mlp = MLP([dim * dim, hidden, dim * dim], rng, zero_last=True, name=name)

    def __call__(self, cov):
        flat = T.reshape(T.lift(cov), (1, self.dim * self.dim))
        delta = T.reshape(self.mlp(flat), (self.dim, self.dim))
        return T.add(delta, np.eye(self.dim, dtype=delta.dtype))


class TransformPredictor(Module):
    """The two predictors: whitening (content) and coloring (style)."""

    def __init__(self, rng: np.random.Generator, dim: int = FEATURE_DIM, hidden: int = 512):
        self.mlp_c = CovariancePredictor(rng, dim, hidden, name="mlp_c")
        self.mlp_s = CovariancePredictor(rng, dim, hidden, name="mlp_s")
        self.logger = logging.getLogger(__name__)


def predict_transform(f_c, f_s, predictor: TransformPredictor, mu_f=None, mu_s=None) -> StyleTransform:
    """Predict (T_c, T_s) from the covariances of content and style samples.

    ``f_c`` and ``f_s`` may be arrays or tape tensors (N x D and M x D).
    Covariances are taken around the sample means; ``mu_f``/``mu_s`` only set
    the offsets carried by the transform and default to those sample means.
    Outside a tape the result holds plain arrays.
    """
    t_c = predictor.mlp_c(covariance(f_c))
    t_s = predictor.mlp_s(covariance(f_s))
    mu_f = _plain(f_c).mean(axis=0) if mu_f is None else _plain(mu_f)
    mu_s = _plain(f_s).mean(axis=0) if mu_s is None else _plain(mu_s)
    transform = StyleTransform(t_c, t_s, mu_f, mu_s)
    return transform.detach() if T.active_tape() is None else transform


def _plain(x) -> np.ndarray:
    return np.asarray(x.value if isinstance(x, T.Tensor) else x)
