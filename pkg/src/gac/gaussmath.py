"""Multivariate Gaussian primitives and small SPD linear algebra.

Everything is float64. KL and entropy are in nats.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite

JITTER = 1e-8
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(
                f"mean shape {mean.shape} incompatible with covariance {cov.shape}")
        scale = max(float(np.max(np.abs(cov))), np.finfo(float).tiny)
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise NotPositiveDefinite("covariance is not symmetric")
        spd_factor(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def _cholesky(m: np.ndarray) -> np.ndarray | None:
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return None


def spd_factor(m, jitter: bool = True) -> np.ndarray:
    """Lower-triangular L with ``m = L @ L.T``.

    On failure the matrix is retried once with ``1e-8 * I`` added to the
    diagonal; a second failure raises :class:`NotPositiveDefinite`.
    Works on a single matrix or a stack ``(..., d, d)``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise DimensionMismatch(f"expected square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    L = _cholesky(m)
    if L is None and jitter:
        L = _cholesky(m + JITTER * np.eye(m.shape[-1]))
    if L is None:
        raise NotPositiveDefinite("Cholesky factorization failed")
    return L


def logdet_from_factor(L: np.ndarray) -> np.ndarray:
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def spd_logdet(m) -> float:
    return float(logdet_from_factor(spd_factor(m)))


def spd_inverse(m) -> np.ndarray:
    L = spd_factor(m)
    eye = np.broadcast_to(np.eye(L.shape[-1]), L.shape)
    Linv = np.linalg.solve(L, eye)
    inv = np.swapaxes(Linv, -1, -2) @ Linv
    return 0.5 * (inv + np.swapaxes(inv, -1, -2))


def gauss_kl(p: Gaussian, q: Gaussian) -> float:
    """KL(p || q) for two multivariate Gaussians."""
    if p.dim != q.dim:
        raise DimensionMismatch(f"dimension {p.dim} vs {q.dim}")
    Lp = spd_factor(p.cov)
    Lq = spd_factor(q.cov)
    d = p.dim
    # tr(Sq^-1 Sp) = ||Lq^-1 Lp||_F^2
    A = np.linalg.solve(Lq, Lp)
    diff = np.linalg.solve(Lq, p.mean - q.mean)
    kl = 0.5 * (np.sum(A * A) + diff @ diff - d
                + logdet_from_factor(Lq) - logdet_from_factor(Lp))
    return max(float(kl), 0.0)


def gauss_entropy(p: Gaussian) -> float:
    L = spd_factor(p.cov)
    return 0.5 * (p.dim * (LOG_2PI + 1.0) + float(logdet_from_factor(L)))


def gauss_logpdf(p: Gaussian, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    L = spd_factor(p.cov)
    z = np.linalg.solve(L, (x - p.mean).T).T
    return -0.5 * (np.sum(z * z, axis=-1) + p.dim * LOG_2PI
                   + logdet_from_factor(L))


def gauss_sample(p: Gaussian, rng: np.random.Generator, size: int | None = None):
    """Draw ``mean + L z``; one vector when ``size`` is None, else ``(size, d)``."""
    L = spd_factor(p.cov)
    if size is None:
        return p.mean + L @ rng.standard_normal(p.dim)
    z = rng.standard_normal((size, p.dim))
    return p.mean + z @ L.T
