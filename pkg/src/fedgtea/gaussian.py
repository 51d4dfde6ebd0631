"""Gaussian embedding estimation and closed-form distances between Gaussians.

Covariances are kept strictly positive definite by adding 1e-6 * I at
estimation time, so the distances below never meet a singular matrix on
the package's own data.  All matrix functions (square root, inverse,
log-determinant) go through the Jacobi eigensolver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, NumericError, ShapeError
from .numkit import sym_eig

SHRINKAGE = 1e-6
_SYM_TOL = 1e-9
_NEG_TOL = 1e-8  # distances this far below zero clamp; farther is an error


@dataclass(frozen=True)
class GaussianEmbedding:
    """Mean and covariance summarizing one task's embedding distribution."""

    mean: np.ndarray
    cov: np.ndarray
    sample_count: int = 1

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ShapeError(
                f"inconsistent Gaussian shapes: mean {mean.shape}, cov {cov.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NumericError("non-finite Gaussian parameters")
        scale = max(1.0, float(np.abs(cov).max()))
        if float(np.abs(cov - cov.T).max()) > _SYM_TOL * scale:
            raise ShapeError("covariance is not symmetric within tolerance")

    @property
    def dim(self) -> int:
        return self.mean.size


def estimate_gaussian(embeddings) -> GaussianEmbedding:
    """Sample mean and unbiased (n-1) covariance, shrunk by 1e-6 * I."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a (n, d) stack of vectors, got {x.shape}")
    n, d = x.shape
    if n < 2:
        raise EstimationError(f"need at least 2 samples to estimate a covariance, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T) + SHRINKAGE * np.eye(d)
    return GaussianEmbedding(mean=mean, cov=cov, sample_count=n)


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in [-1e-6, 0) are treated as rounding noise and clamped;
    anything lower means the input was not PSD.
    """
    w, v = sym_eig(np.asarray(a, dtype=np.float64))
    if w.min() < -1e-6:
        raise NumericError(f"matrix is not PSD: min eigenvalue {w.min():.3e}")
    root = v @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ v.T
    return 0.5 * (root + root.T)


def _check_dims(p: GaussianEmbedding, q: GaussianEmbedding) -> None:
    if p.dim != q.dim:
        raise ShapeError(f"Gaussian dimensions differ: {p.dim} vs {q.dim}")


def _clamp_nonneg(value: float, name: str) -> float:
    if value < -_NEG_TOL:
        raise NumericError(f"{name} evaluated to {value:.3e}, below the rounding floor")
    return max(value, 0.0)


def w2_squared(p: GaussianEmbedding, q: GaussianEmbedding) -> float:
    """Squared 2-Wasserstein (Bures) distance between two Gaussians."""
    _check_dims(p, q)
    dmu = p.mean - q.mean
    root_p = psd_sqrt(p.cov)
    inner = psd_sqrt(root_p @ q.cov @ root_p)
    value = float(dmu @ dmu + np.trace(p.cov) + np.trace(q.cov) - 2.0 * np.trace(inner))
    return _clamp_nonneg(value, "w2_squared")


def _inv_logdet(cov: np.ndarray) -> tuple[np.ndarray, float]:
    w, v = sym_eig(cov)
    if w.min() <= 0.0:
        raise NumericError(f"covariance is singular: min eigenvalue {w.min():.3e}")
    inv = v @ np.diag(1.0 / w) @ v.T
    return 0.5 * (inv + inv.T), float(np.log(w).sum())


def kl_divergence(p: GaussianEmbedding, q: GaussianEmbedding) -> float:
    """KL(p || q) between Gaussians; asymmetric in its arguments."""
    _check_dims(p, q)
    k = p.dim
    q_inv, q_logdet = _inv_logdet(q.cov)
    _, p_logdet = _inv_logdet(p.cov)
    dmu = q.mean - p.mean
    value = 0.5 * (np.trace(q_inv @ p.cov) + dmu @ q_inv @ dmu - k
                   + q_logdet - p_logdet)
    return _clamp_nonneg(float(value), "kl_divergence")


def bhattacharyya(p: GaussianEmbedding, q: GaussianEmbedding) -> float:
    """Bhattacharyya distance between Gaussians; symmetric in its arguments."""
    _check_dims(p, q)
    avg = 0.5 * (p.cov + q.cov)
    avg_inv, avg_logdet = _inv_logdet(avg)
    _, p_logdet = _inv_logdet(p.cov)
    _, q_logdet = _inv_logdet(q.cov)
    dmu = p.mean - q.mean
    value = 0.125 * (dmu @ avg_inv @ dmu) + 0.5 * (avg_logdet
                                                   - 0.5 * (p_logdet + q_logdet))
    return _clamp_nonneg(float(value), "bhattacharyya")


_METRICS = {"w2": w2_squared, "kl": kl_divergence, "bhat": bhattacharyya}


def distance_matrix(gaussians: list[GaussianEmbedding], kind: str) -> np.ndarray:
    """Full pairwise distance matrix under one of {w2, kl, bhat}."""
    try:
        fn = _METRICS[kind]
    except KeyError:
        raise ValueError(f"unknown metric '{kind}', expected one of {sorted(_METRICS)}")
    n = len(gaussians)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                out[i, j] = fn(gaussians[i], gaussians[j])
    return out
