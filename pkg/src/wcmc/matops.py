"""Dense matrix primitives shared by every aggregation scheme.

All spectral operations run a symmetric eigendecomposition on the
symmetrized input (A + A^T)/2; the matrices handled here are covariances,
for which symmetric solvers are the stable choice.  Eigenvalues below
``EIG_RTOL`` times the largest eigenvalue are treated as zero, so the
inverse-type operations are pseudo-inverses on the numerical range.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import toeplitz

# Relative eigenvalue / singular-value cutoff for pseudo-spectral operations.
EIG_RTOL = 1e-10

# A symmetric input may deviate from its transpose by at most this relative
# amount before it is rejected.
SYM_RTOL = 1e-12


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return (A + A^T)/2."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def _require_square(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def _require_symmetric(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = _require_square(a, name)
    scale = np.abs(a).max()
    if scale > 0 and np.abs(a - a.T).max() > SYM_RTOL * scale:
        raise ValueError(f"{name} is not symmetric to within {SYM_RTOL:g} relative")
    return symmetrize(a)


def zf_pseudoinverse(h: np.ndarray) -> np.ndarray:
    """Right pseudoinverse H^T (H H^T)^{-1} of a fat full-row-rank matrix.

    Used as the zero-forcing pre-equalizer: H @ zf_pseudoinverse(H) is the
    identity on the receive side.  Raises ``LinAlgError`` when the smallest
    singular value falls below ``EIG_RTOL`` times the largest.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {h.shape}")
    m_r, m_t = h.shape
    if m_t < m_r:
        raise ValueError(f"need at least as many columns as rows, got {h.shape}")
    sv = np.linalg.svd(h, compute_uv=False)
    if sv[-1] <= EIG_RTOL * sv[0]:
        raise np.linalg.LinAlgError(
            f"rank-deficient matrix: singular values span [{sv[-1]:.3e}, {sv[0]:.3e}]"
        )
    return np.linalg.solve(h @ h.T, h).T


def _psd_eig(a: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecompose a symmetric PSD matrix, rejecting indefinite input."""
    a = _require_symmetric(a, name)
    w, v = np.linalg.eigh(a)
    top = max(w[-1], 0.0)
    if w[0] < -EIG_RTOL * top - 10 * np.finfo(float).tiny:
        raise ValueError(
            f"{name} is not positive semidefinite: eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}]"
        )
    return np.clip(w, 0.0, None), v


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    w, v = _psd_eig(a, "psd_sqrt input")
    return (v * np.sqrt(w)) @ v.T


def psd_inv_sqrt(a: np.ndarray) -> np.ndarray:
    """Pseudo inverse square root of a symmetric PSD matrix.

    Eigenvalues below ``EIG_RTOL`` times the largest map to zero, so for a
    singular input the result inverts only the numerical range.
    """
    w, v = _psd_eig(a, "psd_inv_sqrt input")
    thr = EIG_RTOL * (w[-1] if w[-1] > 0 else 0.0)
    inv_sqrt = np.where(w > thr, 1.0 / np.sqrt(np.where(w > thr, w, 1.0)), 0.0)
    return (v * inv_sqrt) @ v.T


def positive_part(a: np.ndarray) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone by clamping negative eigenvalues."""
    a = _require_symmetric(a, "positive_part input")
    w, v = np.linalg.eigh(a)
    return (v * np.clip(w, 0.0, None)) @ v.T


def toeplitz_covariance(rho: float, dim: int) -> np.ndarray:
    """Symmetric Toeplitz covariance with entries rho^{|i-j|}."""
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [-1, 1], got {rho}")
    if dim < 1:
        raise ValueError(f"dim must be positive, got {dim}")
    return toeplitz(float(rho) ** np.arange(dim))


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """Factor L with L L^T = cov: Cholesky when positive definite, eigen fallback."""
    cov = _require_symmetric(cov, "covariance")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = _psd_eig(cov, "covariance")
        return v * np.sqrt(w)


def sample_mvn(
    mean: np.ndarray,
    cov: np.ndarray,
    rng: np.random.Generator,
    size: int | None = None,
) -> np.ndarray:
    """Draw from N(mean, cov) as mean + L z with L a PSD factor of cov.

    Returns shape (d,) for ``size=None`` and (size, d) otherwise.  Draws are
    reproducible for a fixed generator state.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.asarray(cov, dtype=float)
    d = mean.shape[0]
    if cov.shape != (d, d):
        raise ValueError(f"covariance shape {cov.shape} does not match mean length {d}")
    factor = psd_factor(cov)
    shape = (d,) if size is None else (size, d)
    z = rng.standard_normal(shape)
    return mean + z @ factor.T
