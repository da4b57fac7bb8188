"""Evaluation of produced samples against a reference posterior.

The headline metric is the mean relative error of all d^2 second-moment
test functions theta_i theta_j; predictive quality for probit models is the
mean Bernoulli KL between ensemble predictions under produced and reference
samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class ReferencePosterior:
    """Ground truth for metrics: an exact second-moment matrix or reference samples."""

    second_moment: np.ndarray | None = None
    samples: np.ndarray | None = None

    def __post_init__(self):
        if (self.second_moment is None) == (self.samples is None):
            raise ValueError("provide exactly one of second_moment or samples")
        if self.samples is not None:
            s = np.asarray(self.samples, dtype=float)
            if s.ndim != 2 or s.shape[0] < 1000:
                raise ValueError(f"sample-based reference needs >= 1000 samples, got {s.shape}")
            object.__setattr__(self, "samples", s)
        else:
            m = np.asarray(self.second_moment, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"second moment must be square, got shape {m.shape}")
            object.__setattr__(self, "second_moment", m)

    def moment(self) -> np.ndarray:
        if self.second_moment is not None:
            return self.second_moment
        return second_moment(self.samples)


def second_moment(samples: np.ndarray) -> np.ndarray:
    """Uncentered second-moment matrix (1/S) sum_s theta_s theta_s^T."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected (S, d) samples, got shape {x.shape}")
    return x.T @ x / x.shape[0]


class SecondOrderError(NamedTuple):
    error: float
    n_used: int
    n_excluded: int


def second_order_error(
    samples: np.ndarray,
    reference_moment: np.ndarray,
    return_detail: bool = False,
):
    """Mean relative error of the d^2 second-moment entries.

    Entries whose reference value is exactly zero cannot be scored (division
    by zero) and are excluded; their count is reported in the detailed form
    so runs stay comparable.
    """
    m_hat = second_moment(samples)
    m_ref = np.asarray(reference_moment, dtype=float)
    if m_ref.shape != m_hat.shape:
        raise ValueError(f"reference shape {m_ref.shape} does not match {m_hat.shape}")
    usable = m_ref != 0.0
    n_used = int(usable.sum())
    if n_used == 0:
        raise ValueError("reference second moment is identically zero")
    err = float(np.mean(np.abs(m_hat[usable] - m_ref[usable]) / np.abs(m_ref[usable])))
    if return_detail:
        return SecondOrderError(err, n_used, int((~usable).sum()))
    return err


def ensemble_predict(samples: np.ndarray, covariates: np.ndarray) -> np.ndarray:
    """Ensemble probit prediction (1/S) sum_s Phi(theta_s^T u) per covariate row."""
    thetas = np.asarray(samples, dtype=float)
    u = np.asarray(covariates, dtype=float)
    single = u.ndim == 1
    margins = np.atleast_2d(u) @ thetas.T  # (n, S)
    probs = ndtr(margins).mean(axis=1)
    return float(probs[0]) if single else probs


def bernoulli_kl(p, q) -> np.ndarray:
    """KL(Bern(p) || Bern(q)) in nats, probabilities clamped away from {0, 1}."""
    p = np.clip(np.asarray(p, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    q = np.clip(np.asarray(q, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return p * np.log(p / q) + (1.0 - p) * np.log((1.0 - p) / (1.0 - q))


def kl_ensemble(
    samples: np.ndarray,
    reference_samples: np.ndarray,
    test_covariates: np.ndarray,
) -> float:
    """Mean Bernoulli KL between produced and reference ensemble predictions."""
    u = np.atleast_2d(np.asarray(test_covariates, dtype=float))
    if u.shape[0] < 1:
        raise ValueError("need at least one test covariate")
    p = ensemble_predict(samples, u)
    q = ensemble_predict(reference_samples, u)
    return float(np.mean(bernoulli_kl(p, q)))
