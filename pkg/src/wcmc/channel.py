"""Simulated uncoded transmission of posterior samples.

One communication block carries one model sample per scheduled worker.  The
transmitted vector is x = H^+ E theta (zero-forcing times a repetition
encoder), so the receive side sees y = E theta + n exactly; the channel
matrix only matters for the transmit-power audit.  Orthogonal access (OMA)
yields one received vector per worker per block, non-orthogonal access
(NOMA) superimposes all workers into a single vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matops import zf_pseudoinverse

POWER_RTOL = 1e-6


@dataclass(frozen=True)
class ChannelModel:
    """Per-block channel draw: identity (flat) or i.i.d. standard Gaussian entries."""

    kind: str  # "identity" | "iid-gaussian"
    m_t: int
    m_r: int

    def __post_init__(self):
        if self.kind not in ("identity", "iid-gaussian"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if not self.m_t >= self.m_r >= 1:
            raise ValueError(f"need m_t >= m_r >= 1, got m_t={self.m_t}, m_r={self.m_r}")
        if self.kind == "identity" and self.m_t != self.m_r:
            raise ValueError("identity channels require m_t == m_r")

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(self.m_r)
        return rng.standard_normal((self.m_r, self.m_t))

    def mean_inverse_gram(self) -> np.ndarray:
        """Analytic E[(H H^T)^{-1}].

        Identity channels give I.  For i.i.d. Gaussian entries H H^T is
        Wishart(m_t, I), whose inverse has mean I / (m_t - m_r - 1); with
        m_t = m_r + 2 this is exactly I.
        """
        if self.kind == "identity":
            return np.eye(self.m_r)
        excess = self.m_t - self.m_r - 1
        if excess < 1:
            raise ValueError(
                f"mean inverse gram requires m_t >= m_r + 2, got m_t={self.m_t}, m_r={self.m_r}"
            )
        return np.eye(self.m_r) / excess


@dataclass(frozen=True)
class PowerConfig:
    """Per-block power budget and noise level."""

    p: float
    n0: float

    def __post_init__(self):
        if self.p <= 0:
            raise ValueError(f"power budget must be positive, got {self.p}")
        if self.n0 < 0:
            raise ValueError(f"noise variance must be non-negative, got {self.n0}")

    @classmethod
    def from_snr_db(cls, snr_db: float, m_r: int, p: float = 1.0) -> "PowerConfig":
        """Build from SNR = P / (m_r N0) in dB; m_r is d or 2d depending on setup."""
        n0 = p / (m_r * 10.0 ** (snr_db / 10.0))
        return cls(p=p, n0=n0)


@dataclass(frozen=True)
class RepetitionEncoding:
    """Repetition encoder E = sqrt(scale) (1_reps (x) I_dim), an m_r x dim matrix."""

    dim: int
    reps: int
    scale: float

    def __post_init__(self):
        if self.dim < 1 or self.reps < 1:
            raise ValueError("dim and reps must be positive")
        if self.scale <= 0:
            raise ValueError(f"power scale must be positive, got {self.scale}")

    @property
    def m_r(self) -> int:
        return self.reps * self.dim

    def matrix(self) -> np.ndarray:
        return np.sqrt(self.scale) * np.tile(np.eye(self.dim), (self.reps, 1))

    def encode(self, thetas: np.ndarray) -> np.ndarray:
        """Map (..., dim) samples to (..., m_r) encoded vectors."""
        thetas = np.asarray(thetas, dtype=float)
        out = np.concatenate([thetas] * self.reps, axis=-1)
        return np.sqrt(self.scale) * out

    def fold_matrix(self) -> np.ndarray:
        """(dim, m_r) map averaging the repetition blocks; leaves sqrt(scale) in place."""
        return np.tile(np.eye(self.dim), (1, self.reps)) / self.reps

    def decode_matrix(self) -> np.ndarray:
        """Pseudoinverse of the encoder, (dim, m_r); removes the power scale."""
        return self.fold_matrix() / np.sqrt(self.scale)

    def decode(self, ys: np.ndarray) -> np.ndarray:
        return np.asarray(ys, dtype=float) @ self.decode_matrix().T


def repetition_power_map(dim: int, reps: int, mean_inverse_gram: np.ndarray) -> np.ndarray:
    """Quadratic form M with theta^T M theta = tr(G (1 (x) I) theta theta^T (1 (x) I)^T)."""
    rep = np.tile(np.eye(dim), (reps, 1))
    g = np.asarray(mean_inverse_gram, dtype=float)
    if g.shape != (reps * dim, reps * dim):
        raise ValueError(f"mean inverse gram shape {g.shape} does not match m_r={reps * dim}")
    return rep.T @ g @ rep


def power_scale(
    samples: np.ndarray,
    mean_inverse_gram: np.ndarray,
    reps: int,
    p_budget: float,
) -> float:
    """Power scale making the long-term average transmit power equal the budget.

    P_k = P S / sum_s theta_s^T M theta_s with M the repetition-folded mean
    inverse channel gram, so encoding the S samples with sqrt(P_k) spends
    exactly P per block on average.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 1:
        raise ValueError(f"expected (S, d) samples, got shape {samples.shape}")
    m = repetition_power_map(samples.shape[1], reps, mean_inverse_gram)
    denom = float(np.einsum("sd,de,se->", samples, m, samples))
    if denom <= 0.0:
        raise ValueError("cannot scale power: samples are all zero")
    return p_budget * samples.shape[0] / denom


def oma_encodings(p_scales, dim: int, reps: int = 1) -> list[RepetitionEncoding]:
    return [RepetitionEncoding(dim=dim, reps=reps, scale=float(p)) for p in p_scales]


def noma_encoding(p_scales, dim: int, reps: int = 1) -> RepetitionEncoding:
    """Shared encoder scaled by the smallest per-worker power scale."""
    return RepetitionEncoding(dim=dim, reps=reps, scale=float(min(p_scales)))


def precode(theta: np.ndarray, h: np.ndarray, encoding: RepetitionEncoding) -> np.ndarray:
    """Transmit vector x = H^+ E theta; H x reproduces E theta exactly."""
    theta = np.asarray(theta, dtype=float)
    return zf_pseudoinverse(h) @ (encoding.matrix() @ theta)


def transmit_oma(
    thetas: np.ndarray,
    encodings: list[RepetitionEncoding],
    n0: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Received OMA blocks y[s, k] = E_k theta[s, k] + noise, shape (S, K, m_r).

    Noise entries are i.i.d. N(0, n0), independent across workers and blocks.
    """
    thetas = np.asarray(thetas, dtype=float)
    s, k, _ = thetas.shape
    if len(encodings) != k:
        raise ValueError(f"{k} workers but {len(encodings)} encodings")
    m_r = encodings[0].m_r
    if any(e.m_r != m_r for e in encodings):
        raise ValueError("all encodings must share the same output length")
    ys = np.empty((s, k, m_r))
    for j, enc in enumerate(encodings):
        ys[:, j, :] = enc.encode(thetas[:, j, :])
    return ys + np.sqrt(n0) * rng.standard_normal(ys.shape)


def transmit_noma(
    thetas: np.ndarray,
    encoding: RepetitionEncoding,
    n0: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Received NOMA blocks y[s] = E sum_k theta[s, k] + noise, shape (S, m_r)."""
    thetas = np.asarray(thetas, dtype=float)
    superposed = thetas.sum(axis=1)
    ys = encoding.encode(superposed)
    return ys + np.sqrt(n0) * rng.standard_normal(ys.shape)


def expected_block_powers(
    samples: np.ndarray,
    mean_inverse_gram: np.ndarray,
    encoding: RepetitionEncoding,
) -> np.ndarray:
    """Per-block transmit power averaged over the channel law, shape (S,)."""
    samples = np.asarray(samples, dtype=float)
    m = repetition_power_map(encoding.dim, encoding.reps, mean_inverse_gram)
    return encoding.scale * np.einsum("sd,de,se->s", samples, m, samples)


def realized_block_powers(
    samples: np.ndarray,
    channel: ChannelModel,
    encoding: RepetitionEncoding,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-block ||H^+ E theta||^2 with a fresh channel draw every block."""
    samples = np.asarray(samples, dtype=float)
    out = np.empty(samples.shape[0])
    for s in range(samples.shape[0]):
        out[s] = float(np.sum(precode(samples[s], channel.draw(rng), encoding) ** 2))
    return out


def verify_power(block_powers: np.ndarray, p_budget: float) -> tuple[bool, float]:
    """Check the average per-block power against the budget.

    Returns (ok, measured_average); ok is true when the average does not
    exceed the budget by more than ``POWER_RTOL`` relative.
    """
    block_powers = np.asarray(block_powers, dtype=float)
    if block_powers.size < 1:
        raise ValueError("need at least one block")
    measured = float(block_powers.mean())
    return measured <= p_budget * (1.0 + POWER_RTOL), measured
