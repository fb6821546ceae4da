"""Covariance estimation and the symmetric eigensolver."""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from src.nets import tape as T
from src.nets.tape import Tensor
from src.utils.errors import EigenDecompositionError

logger = logging.getLogger(__name__)

EIG_FLOOR = 1e-5
MAX_SWEEPS = 100
OFF_TOL = 1e-12


@dataclass
class EigenDecomposition:
    """Eigenvalues (descending, floored) and eigenvectors as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues[None, :]) @ self.eigenvectors.T

    def power(self, exponent: float) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues[None, :] ** exponent) @ self.eigenvectors.T


def covariance(samples: Union[np.ndarray, Tensor], mean=None):
    """Biased covariance (1/N) X̄ᵀX̄ of the rows of ``samples``.

    Works on plain arrays and on tape tensors; ``mean`` defaults to the sample
    mean.
    """
    n = samples.shape[0]
    if n < 2:
        raise ValueError(f"Covariance needs at least 2 samples, got {n}")
    if isinstance(samples, Tensor) or isinstance(mean, Tensor):
        mu = T.mean(samples, axis=0, keepdims=True) if mean is None else T.reshape(T.lift(mean), (1, -1))
        centered = T.sub(samples, mu)
        return T.div(T.matmul(T.swap_last(centered), centered), float(n))
    samples = np.asarray(samples)
    mu = samples.mean(axis=0, keepdims=True) if mean is None else np.asarray(mean).reshape(1, -1)
    centered = samples - mu
    return centered.T @ centered / n


def _jacobi(m: np.ndarray):
    a = np.array(m, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(1.0, float(np.linalg.norm(a)))
    for sweep in range(MAX_SWEEPS + 1):
        off = np.sqrt(np.sum(a * a) - np.sum(np.diag(a) ** 2))
        if off < OFF_TOL * scale:
            return np.diag(a).copy(), v, sweep
        if sweep == MAX_SWEEPS:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    raise EigenDecompositionError(
        f"Jacobi eigensolver did not converge after {MAX_SWEEPS} sweeps (off-diagonal norm {off:.3e})"
    )


def eigh_raw(m: np.ndarray):
    """Unfloored eigenpairs (descending) with canonical eigenvector signs."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"eigh expects a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise EigenDecompositionError("eigh input contains non-finite entries")
    sym = 0.5 * (m + m.T)
    lam, vecs, sweeps = _jacobi(sym)
    logger.debug(f"Jacobi converged in {sweeps} sweeps for {m.shape[0]}x{m.shape[0]} input")
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        nz = np.flatnonzero(np.abs(vecs[:, j]) > 1e-15)
        if nz.size and vecs[nz[0], j] < 0:
            vecs[:, j] = -vecs[:, j]
    return lam, vecs


def eigh(m: np.ndarray, floor: float = EIG_FLOOR) -> EigenDecomposition:
    """Symmetric eigendecomposition by cyclic Jacobi rotations.

    The input is symmetrized first. Eigenvalues are sorted descending and
    floored at ``floor``; each eigenvector's first nonzero component is made
    positive.

    Raises:
        EigenDecompositionError: when 100 sweeps do not reach convergence
    """
    lam, vecs = eigh_raw(m)
    return EigenDecomposition(eigenvalues=np.maximum(lam, floor), eigenvectors=vecs)


def matrix_power_sym(m, exponent: float, floor: float = EIG_FLOOR):
    """M^exponent for symmetric PSD M with floored eigenvalues.

    Differentiable when ``m`` is a tape tensor.
    """
    def fn(lam):
        return np.maximum(lam, floor) ** exponent

    def dfn(lam):
        return np.where(lam > floor, exponent * np.maximum(lam, floor) ** (exponent - 1), 0.0)

    if isinstance(m, Tensor):
        return T.symmetric_matrix_function(m, fn, dfn, eigh_raw)
    return eigh(m, floor).power(exponent)
