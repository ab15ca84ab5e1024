"""Multivariate normal helpers used across densities, models and EM."""

from __future__ import annotations

import numpy as np

from .errors import InputError

_LOG_2PI = float(np.log(2.0 * np.pi))


def as_points(x, dim: int) -> np.ndarray:
    """Coerce ``x`` to an (n, dim) float array.

    A 1-D array is read as n scalar points when dim == 1, and as a single
    point when its length equals dim > 1.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if dim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.shape[0] == dim:
            arr = arr.reshape(1, dim)
        else:
            raise InputError(f"point of length {arr.shape[0]} does not match dimension {dim}")
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise InputError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr


def check_spd(cov: np.ndarray, sym_tol: float = 1e-12, name: str = "covariance") -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InputError(f"{name} must be a square matrix, got shape {cov.shape}")
    scale = max(1.0, float(np.abs(cov).max()))
    if np.abs(cov - cov.T).max() > sym_tol * scale:
        raise InputError(f"{name} is not symmetric within {sym_tol}")
    if np.linalg.eigvalsh(cov).min() <= 0:
        raise InputError(f"{name} is not positive definite")
    return 0.5 * (cov + cov.T)


def chol_logdet(cov: np.ndarray):
    """Lower Cholesky factor and log-determinant of an SPD matrix."""
    chol = np.linalg.cholesky(cov)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return chol, logdet


def mvn_logpdf_chol(X: np.ndarray, mean: np.ndarray, chol: np.ndarray, logdet: float) -> np.ndarray:
    """Log N(x; mean, LL^T) for rows of X, given the Cholesky factor L."""
    d = mean.shape[0]
    diff = X - mean
    sol = np.linalg.solve(chol, diff.T) if d > 1 else diff.T / chol[0, 0]
    maha = np.sum(sol * sol, axis=0)
    return -0.5 * (d * _LOG_2PI + logdet + maha)


def mvn_logpdf(X: np.ndarray, mean, cov) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    chol, logdet = chol_logdet(np.asarray(cov, dtype=float))
    return mvn_logpdf_chol(np.asarray(X, dtype=float), mean, chol, logdet)


def mvn_sample(rng: np.random.Generator, mean, cov, n: int) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
    z = rng.standard_normal((n, mean.shape[0]))
    return mean + z @ chol.T


def clamp_eigenvalues(mat: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Symmetrize and clamp the spectrum of ``mat`` to [lo, hi]."""
    sym = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, lo, hi)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)
