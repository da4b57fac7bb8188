"""One-shot linear aggregation rules at the server.

``gcmc_weights`` is the classical inverse-covariance consensus rule fitted
on decoded samples as if communication were noiseless.  The channel-aware
rules subtract the known noise covariance from the received-signal
covariance and rescale so that the aggregated sample's law matches the
product posterior as the sample count grows.  Weight matrices are kept
dense; diagonal approximations for large models are out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matops import _require_symmetric, positive_part, symmetrize

# Relative ridge added to an estimated covariance before inversion when it is
# numerically singular (possible after the PSD projection).
RIDGE_RTOL = 1e-8


@dataclass(frozen=True)
class WeightSet:
    """Server-side aggregation weights.

    ``matrices`` has shape (K, d, m_r) in OMA mode (one matrix per worker)
    and (d, m_r) in NOMA mode (a single matrix for the superposed signal).
    """

    mode: str  # "oma" | "noma"
    matrices: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=float)
        if self.mode == "oma":
            if m.ndim != 3:
                raise ValueError(f"OMA weights must be (K, d, m_r), got {m.shape}")
        elif self.mode == "noma":
            if m.ndim != 2:
                raise ValueError(f"NOMA weight must be (d, m_r), got {m.shape}")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not np.all(np.isfinite(m)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "matrices", m)

    def copy(self) -> "WeightSet":
        return WeightSet(self.mode, self.matrices.copy())


def apply_weights(weights: WeightSet, ys: np.ndarray) -> np.ndarray:
    """Aggregate received blocks into global samples, one per block.

    OMA: theta[s] = sum_k W_k y[s, k] for ys of shape (S, K, m_r).
    NOMA: theta[s] = W y[s] for ys of shape (S, m_r).
    """
    ys = np.asarray(ys, dtype=float)
    if weights.mode == "oma":
        if ys.ndim != 3 or ys.shape[1] != weights.matrices.shape[0]:
            raise ValueError(f"expected (S, K={weights.matrices.shape[0]}, m_r) blocks, got {ys.shape}")
        return np.einsum("kdm,skm->sd", weights.matrices, ys)
    if ys.ndim != 2:
        raise ValueError(f"expected (S, m_r) blocks, got {ys.shape}")
    return ys @ weights.matrices.T


def empirical_covariance(x: np.ndarray) -> np.ndarray:
    """Unbiased mean-centered sample covariance of (S, m) rows."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need at least two rows, got shape {x.shape}")
    centered = x - x.mean(axis=0)
    return symmetrize(centered.T @ centered / (x.shape[0] - 1))


def _ridged(a: np.ndarray) -> np.ndarray:
    """Add the relative ridge when the smallest eigenvalue sits at or below it."""
    a = symmetrize(a)
    lam = RIDGE_RTOL * np.trace(a) / a.shape[0]
    w = np.linalg.eigvalsh(a)
    if w[0] <= lam or lam <= 0.0:
        floor = lam if lam > 0 else RIDGE_RTOL
        return a + floor * np.eye(a.shape[0])
    return a


def _inv(a: np.ndarray) -> np.ndarray:
    out = np.linalg.inv(_ridged(a))
    return symmetrize(out)


def _precision_weighted_mean_map(covs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-worker precisions and their combined covariance (sum of inverses)^{-1}."""
    precisions = np.stack([_inv(c) for c in covs])
    combined = symmetrize(np.linalg.inv(_ridged(precisions.sum(axis=0))))
    return precisions, combined


def gcmc_weights(decoded: np.ndarray) -> WeightSet:
    """Inverse-covariance consensus weights fitted on decoded samples.

    ``decoded`` has shape (S, K, d) with S >= 2.  The returned square
    weights satisfy sum_k W_k = I and sum to the precision-weighted mean map.
    """
    decoded = np.asarray(decoded, dtype=float)
    if decoded.ndim != 3 or decoded.shape[0] < 2:
        raise ValueError(f"expected (S >= 2, K, d) samples, got shape {decoded.shape}")
    covs = np.stack([empirical_covariance(decoded[:, k, :]) for k in range(decoded.shape[1])])
    precisions, combined = _precision_weighted_mean_map(covs)
    return WeightSet("oma", np.einsum("de,kef->kdf", combined, precisions))


def _joint_inv_sqrt(cov: np.ndarray, p_scale: float, n0: float) -> np.ndarray:
    """C^{-1/2} (p C + n0 I)^{-1/2} from a single eigendecomposition.

    Both factors are functions of C, so they share eigenvectors; computing
    them jointly keeps the product exactly symmetric.  Zero eigenvalues are
    ridged away first (the PSD projection can produce them).
    """
    c = _ridged(_require_symmetric(cov, "covariance estimate"))
    w, v = np.linalg.eigh(c)
    w = np.clip(w, np.finfo(float).tiny, None)
    diag = 1.0 / np.sqrt(w * (p_scale * w + n0))
    return (v * diag) @ v.T


def wgcmc_oma_weights_exact(covs, p_scales, n0: float) -> np.ndarray:
    """Channel-aware OMA weights from known subposterior covariances.

    W_k = (sum C^{-1})^{-1} C_k^{-1/2} (P_k C_k + N0 I)^{-1/2}; with these
    weights sum_k W_k (P_k C_k + N0 I) W_k^T equals the product-posterior
    covariance (sum C^{-1})^{-1} identically.
    """
    covs = np.stack([_require_symmetric(c, "covariance") for c in covs])
    p_scales = np.asarray(p_scales, dtype=float)
    precisions, combined = _precision_weighted_mean_map(covs)
    return np.stack(
        [combined @ _joint_inv_sqrt(c, p, n0) for c, p in zip(covs, p_scales)]
    )


def wgcmc_noma_weight_exact(cov0: np.ndarray, n_workers: int, min_p: float, n0: float) -> np.ndarray:
    """Channel-aware NOMA weight from a known common covariance.

    W = K^{-1/2} C_0^{1/2} (K min_p C_0 + N0 I)^{-1/2} maps the superposed
    signal law onto the homogeneous product posterior N(0, C_0 / K).
    """
    c = _ridged(_require_symmetric(cov0, "covariance"))
    w, v = np.linalg.eigh(c)
    w = np.clip(w, 0.0, None)
    diag = np.sqrt(w / (n_workers * min_p * w + n0)) if n0 > 0 else np.where(
        w > 0, np.sqrt(w / (n_workers * min_p * w)), 0.0
    )
    return ((v * diag) @ v.T) / np.sqrt(n_workers)


def _fold(ys: np.ndarray, reps: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Average repetition blocks of the trailing axis; returns (folded, map, 1/reps)."""
    ys = np.asarray(ys, dtype=float)
    m_r = ys.shape[-1]
    if m_r % reps != 0:
        raise ValueError(f"block length {m_r} is not a multiple of reps={reps}")
    d = m_r // reps
    fold = np.tile(np.eye(d), (1, reps)) / reps
    return ys @ fold.T, fold, 1.0 / reps


def wgcmc_oma(ys: np.ndarray, p_scales, n0: float, reps: int = 1) -> WeightSet:
    """Channel-aware OMA weights estimated from noisy received blocks.

    ``ys`` has shape (S, K, m_r) with S >= 2.  Repetition blocks are averaged
    first, which divides the effective noise level by ``reps``; the
    covariance of each worker's folded signal minus that noise, projected
    onto the PSD cone and divided by P_k, estimates the subposterior
    covariance that the closed-form rule needs.
    """
    ys = np.asarray(ys, dtype=float)
    if ys.ndim != 3 or ys.shape[0] < 2:
        raise ValueError(f"expected (S >= 2, K, m_r) blocks, got shape {ys.shape}")
    p_scales = np.asarray(p_scales, dtype=float)
    if p_scales.shape != (ys.shape[1],):
        raise ValueError("need one power scale per worker")
    folded, fold, _ = _fold(ys, reps)
    n0_eff = n0 / reps
    d = folded.shape[-1]
    cov_hats = np.stack(
        [
            positive_part(empirical_covariance(folded[:, k, :]) - n0_eff * np.eye(d)) / p_scales[k]
            for k in range(ys.shape[1])
        ]
    )
    _, combined = _precision_weighted_mean_map(cov_hats)
    reduced = np.stack(
        [combined @ _joint_inv_sqrt(c, p, n0_eff) for c, p in zip(cov_hats, p_scales)]
    )
    return WeightSet("oma", np.einsum("kde,em->kdm", reduced, fold))


def wgcmc_noma(ys: np.ndarray, n_workers: int, min_p: float, n0: float, reps: int = 1) -> WeightSet:
    """Channel-aware NOMA weight estimated from noisy superposed blocks.

    ``ys`` has shape (S, m_r) with S >= 2.  The folded-signal covariance
    minus the effective noise, projected PSD and divided by K min_p,
    estimates the common subposterior covariance.
    """
    ys = np.asarray(ys, dtype=float)
    if ys.ndim != 2 or ys.shape[0] < 2:
        raise ValueError(f"expected (S >= 2, m_r) blocks, got shape {ys.shape}")
    folded, fold, _ = _fold(ys, reps)
    n0_eff = n0 / reps
    d = folded.shape[-1]
    cov0_hat = positive_part(empirical_covariance(folded) - n0_eff * np.eye(d)) / (
        n_workers * min_p
    )
    reduced = wgcmc_noma_weight_exact(cov0_hat, n_workers, min_p, n0_eff)
    return WeightSet("noma", reduced @ fold)
