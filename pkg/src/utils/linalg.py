"""Small dense linear-algebra helpers shared by the core modules."""

import logging

import numpy as np

from src.core.errors import NonPsdError

logger = logging.getLogger(__name__)

PSD_RTOL = 1e-10
CLAMP_TOL = 1e-12


def symmetrize(matrix):
    """Return (M + M^T) / 2 for a square matrix or a stack of them."""
    matrix = np.asarray(matrix, dtype=float)
    return 0.5 * (matrix + np.swapaxes(matrix, -1, -2))


def check_psd(matrix, rtol=PSD_RTOL, what="covariance"):
    """
    Symmetrize and verify positive semidefiniteness.

    Fails when the smallest eigenvalue is below -rtol * largest eigenvalue.
    Returns the symmetrized matrix.
    """
    sym = symmetrize(matrix)
    if sym.size == 0:
        return sym
    eigvals = np.linalg.eigvalsh(sym)
    lam_min, lam_max = float(eigvals[0]), float(eigvals[-1])
    if not np.all(np.isfinite(eigvals)):
        raise NonPsdError(f"{what} matrix has non-finite eigenvalues")
    if lam_min < -rtol * max(abs(lam_max), np.finfo(float).tiny):
        raise NonPsdError(
            f"{what} matrix is not PSD: smallest eigenvalue {lam_min:.3e}, "
            f"largest {lam_max:.3e}",
            min_eigenvalue=lam_min,
        )
    return sym


def psd_sqrt(matrix, clamp_tol=CLAMP_TOL):
    """
    Symmetric square root via eigen-decomposition.

    Negative eigenvalues are clamped at zero; clamps larger than
    clamp_tol * largest eigenvalue are logged.
    """
    sym = symmetrize(matrix)
    eigvals, eigvecs = np.linalg.eigh(sym)
    scale = max(float(np.max(np.abs(eigvals))) if eigvals.size else 0.0, np.finfo(float).tiny)
    if eigvals.size and eigvals[0] < -clamp_tol * scale:
        logger.warning("clamping eigenvalue %.3e to zero in matrix square root", eigvals[0])
    root = np.sqrt(np.clip(eigvals, 0.0, None))
    return (eigvecs * root) @ eigvecs.T


def spectral_norm(matrices):
    """Spectral norm of a matrix or of each matrix in a stack."""
    return np.linalg.norm(np.asarray(matrices, dtype=float), ord=2, axis=(-2, -1))
