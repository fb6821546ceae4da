"""Whitening/coloring style transforms in the 32-dim feature space."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from src.nets import tape as T
from src.nets.tape import Tensor
from src.utils.errors import InvalidInputError, WeightSumError
from src.wct.linalg import EIG_FLOOR, covariance, eigh

logger = logging.getLogger(__name__)

FEATURE_DIM = 32
ArrayOrTensor = Union[np.ndarray, Tensor]


@dataclass
class StyleTransform:
    """T_c (whitening), T_s (coloring) and the two means.

    During training the matrices may be tape tensors; ``detach`` returns a
    pure-numpy copy.
    """

    t_c: ArrayOrTensor
    t_s: ArrayOrTensor
    mu_f: ArrayOrTensor
    mu_s: ArrayOrTensor

    def detach(self) -> "StyleTransform":
        def plain(x):
            return np.array(x.value if isinstance(x, Tensor) else x, copy=True)
        return StyleTransform(plain(self.t_c), plain(self.t_s), plain(self.mu_f), plain(self.mu_s))

    def combined(self) -> ArrayOrTensor:
        """The single matrix T = T_s T_c."""
        return T.matmul(self.t_s, self.t_c) if self._is_tensor() else np.asarray(self.t_s) @ np.asarray(self.t_c)

    def is_finite(self) -> bool:
        d = self.detach()
        return all(np.all(np.isfinite(x)) for x in (d.t_c, d.t_s, d.mu_f, d.mu_s))

    def to_tensors(self, prefix: str = "style") -> Dict[str, np.ndarray]:
        d = self.detach()
        return {f"{prefix}.t_c": d.t_c, f"{prefix}.t_s": d.t_s,
                f"{prefix}.mu_f": d.mu_f, f"{prefix}.mu_s": d.mu_s}

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], prefix: str = "style") -> "StyleTransform":
        return cls(tensors[f"{prefix}.t_c"], tensors[f"{prefix}.t_s"],
                   tensors[f"{prefix}.mu_f"], tensors[f"{prefix}.mu_s"])

    def _is_tensor(self) -> bool:
        return any(isinstance(x, Tensor) for x in (self.t_c, self.t_s, self.mu_f, self.mu_s))


def closed_form_transform(f_c: np.ndarray, f_s: np.ndarray, mu_f=None, mu_s=None,
                          floor: float = EIG_FLOOR) -> StyleTransform:
    """Whitening/coloring pair matching the covariance of ``f_c`` to ``f_s``.

    T_c = W_c Σ_c^{-1/2} W_cᵀ and T_s = W_s Σ_s^{1/2} W_sᵀ, so that
    T cov(F_c) Tᵀ = cov(F_s) with T = T_s T_c (full-rank case).

    Args:
        f_c: content samples, N x D
        f_s: style samples, M x D
        mu_f: content offset carried by the transform; defaults to the mean of ``f_c``
        mu_s: style offset; defaults to the mean of ``f_s``
    """
    f_c = np.asarray(f_c, dtype=np.float64)
    f_s = np.asarray(f_s, dtype=np.float64)
    if f_c.ndim != 2 or f_s.ndim != 2 or f_c.shape[1] != f_s.shape[1]:
        raise InvalidInputError(f"Sample sets must be N x D with equal D, got {f_c.shape} and {f_s.shape}")
    mu_f = f_c.mean(axis=0) if mu_f is None else np.asarray(mu_f, dtype=np.float64)
    mu_s = f_s.mean(axis=0) if mu_s is None else np.asarray(mu_s, dtype=np.float64)
    content = eigh(covariance(f_c), floor)
    style = eigh(covariance(f_s), floor)
    return StyleTransform(t_c=content.power(-0.5), t_s=style.power(0.5), mu_f=mu_f, mu_s=mu_s)


def covariance_loss(f_cs_bar: ArrayOrTensor, f_s_bar: ArrayOrTensor, n_f: int = FEATURE_DIM):
    """(1/N_f) ‖G(F̄_cs) − G(F̄_s)‖²_F where G is the sample covariance.

    Both inputs are centered sample sets (rows are samples). Returns a tensor
    if either input is one.
    """
    if isinstance(f_cs_bar, Tensor) or isinstance(f_s_bar, Tensor):
        g_cs = covariance(T.lift(f_cs_bar), np.zeros(f_cs_bar.shape[1]))
        g_s = covariance(T.lift(f_s_bar), np.zeros(f_s_bar.shape[1]))
        diff = T.sub(g_cs, g_s)
        return T.div(T.tsum(T.square(diff)), float(n_f))
    g_cs = covariance(np.asarray(f_cs_bar), np.zeros(f_cs_bar.shape[1]))
    g_s = covariance(np.asarray(f_s_bar), np.zeros(f_s_bar.shape[1]))
    return float(np.sum((g_cs - g_s) ** 2) / n_f)


def covariance_loss_from_cov(cov_cs: ArrayOrTensor, cov_s: ArrayOrTensor, n_f: int = FEATURE_DIM):
    diff = T.sub(cov_cs, cov_s)
    return T.div(T.tsum(T.square(diff)), float(n_f))


def apply_transform(f: ArrayOrTensor, tr: StyleTransform) -> ArrayOrTensor:
    """Per-pixel affine map F_cs = T_s T_c (F − μ_f) + μ_s on an H x W x D map."""
    if isinstance(f, Tensor) or tr._is_tensor():
        combined = tr.combined()
        centered = T.sub(f, tr.mu_f)
        return T.add(T.matmul(centered, T.swap_last(combined)), tr.mu_s)
    f = np.asarray(f)
    combined = tr.combined()
    return (f - tr.mu_f) @ combined.T + tr.mu_s


def interpolate_styles(transforms: Sequence[Tuple[StyleTransform, float]], tol: float = 1e-9) -> StyleTransform:
    """Convex blend of several transforms sharing μ_f.

    The blended transform carries T_c = I and T_s = Σ w_k T_s^k T_c^k, so
    applying it equals blending the individually stylized maps.

    Raises:
        WeightSumError: negative weights or weights not summing to 1 within ``tol``
        InvalidInputError: empty list or transforms with different μ_f
    """
    if not transforms:
        raise InvalidInputError("interpolate_styles needs at least one transform")
    weights = np.array([w for _, w in transforms], dtype=np.float64)
    if np.any(weights < 0):
        raise WeightSumError(f"Interpolation weights must be non-negative, got {weights.tolist()}")
    total = float(weights.sum())
    if abs(total - 1.0) > tol:
        raise WeightSumError(f"Interpolation weights must sum to 1, got {total!r}")
    plain: List[StyleTransform] = [tr.detach() for tr, _ in transforms]
    mu_f = plain[0].mu_f
    for tr in plain[1:]:
        if not np.array_equal(tr.mu_f, mu_f):
            raise InvalidInputError("All interpolated transforms must share the same content mean mu_f")
    dim = plain[0].t_c.shape[0]
    blended = np.zeros((dim, dim))
    mu_s = np.zeros(dim)
    for tr, w in zip(plain, weights):
        blended = blended + w * tr.combined()
        mu_s = mu_s + w * tr.mu_s
    logger.debug(f"Blended {len(plain)} style transforms with weights {weights.tolist()}")
    return StyleTransform(t_c=np.eye(dim), t_s=blended, mu_f=mu_f.copy(), mu_s=mu_s)
