"""Subposterior models, their samplers, and log-joint gradients.

Two model families are supported: zero-mean Gaussians with known covariance
(the analytically tractable case) and Bayesian probit regression on a data
shard with an underweighted Gaussian prior.  Probit sampling goes through
the latent-variable Gibbs scheme: each latent is a unit-variance Gaussian
truncated to the half-line fixed by its label, and the coefficient draw is
conjugate given the latents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln, log_ndtr, ndtr, ndtri

from .matops import EIG_RTOL, _require_symmetric, psd_factor

_LOG_2PI = np.log(2.0 * np.pi)

# Distance from the truncation boundary beyond which inverse-CDF sampling
# loses precision and the exponential rejection sampler takes over.
_TAIL_CUTOFF = 4.0

# Gibbs coefficient-step system matrix gets this relative ridge when its
# condition number exceeds _COND_CAP.
_RIDGE_RTOL = 1e-10
_COND_CAP = 1e12


# ---------------------------------------------------------------------------
# model containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianSubposterior:
    """Zero-mean Gaussian local posterior with a strictly PD covariance."""

    cov: np.ndarray

    def __post_init__(self):
        cov = _require_symmetric(self.cov, "covariance")
        w = np.linalg.eigvalsh(cov)
        if w[0] <= EIG_RTOL * w[-1]:
            raise ValueError(f"covariance must be positive definite, eigenvalues {w}")
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        from .matops import sample_mvn

        return sample_mvn(np.zeros(self.dim), self.cov, rng, size=size)

    def entropy(self) -> float:
        """Differential entropy (d/2) log(2 pi e) + (1/2) log det cov."""
        sign, logdet = np.linalg.slogdet(self.cov)
        return 0.5 * self.dim * (_LOG_2PI + 1.0) + 0.5 * logdet


@dataclass(frozen=True)
class ProbitShard:
    """A shard of labeled data bound to a Gaussian prior N(0, prior_variance I).

    Subposteriors use the underweighted prior variance K sigma^2; the global
    posterior is the K=1 case with the full data set and variance sigma^2.
    """

    covariates: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) in {0, 1}
    prior_variance: float

    def __post_init__(self):
        u = np.asarray(self.covariates, dtype=float)
        v = np.asarray(self.labels)
        if u.ndim != 2 or u.shape[0] < 1:
            raise ValueError(f"covariates must be (n, d) with n >= 1, got {u.shape}")
        if v.shape != (u.shape[0],):
            raise ValueError("labels must be one per covariate row")
        if not np.isin(v, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if self.prior_variance <= 0:
            raise ValueError(f"prior variance must be positive, got {self.prior_variance}")
        object.__setattr__(self, "covariates", u)
        object.__setattr__(self, "labels", v.astype(int))

    @property
    def size(self) -> int:
        return self.covariates.shape[0]

    @property
    def dim(self) -> int:
        return self.covariates.shape[1]


@dataclass
class GibbsState:
    """Current coefficient draw, per-point latents, and sweep counter."""

    theta: np.ndarray
    latents: np.ndarray
    sweep: int = 0


# ---------------------------------------------------------------------------
# Gaussian aggregation target
# ---------------------------------------------------------------------------


def gaussian_global_covariance(covs) -> np.ndarray:
    """Covariance of the product of zero-mean Gaussians: (sum_k C_k^{-1})^{-1}."""
    covs = [np.asarray(c, dtype=float) for c in covs]
    if not covs:
        raise ValueError("need at least one covariance")
    d = covs[0].shape[0]
    precision = np.zeros((d, d))
    for c in covs:
        c = _require_symmetric(c, "covariance")
        w = np.linalg.eigvalsh(c)
        if w[0] <= EIG_RTOL * w[-1]:
            raise np.linalg.LinAlgError("singular covariance in global combination")
        precision += np.linalg.inv(c)
    out = np.linalg.inv(precision)
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# probit gradients
# ---------------------------------------------------------------------------


def _probit_scores(margins: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d/dt log p(v | t) for probit margins t, computed via exp(log phi - log Phi).

    The signed form phi(s t) / Phi(s t) with s = 2v - 1 stays finite in both
    tails where the textbook ratio overflows.
    """
    signs = 2.0 * np.asarray(labels, dtype=float) - 1.0
    st = signs * np.asarray(margins, dtype=float)
    return signs * np.exp(-0.5 * st * st - 0.5 * _LOG_2PI - log_ndtr(st))


def probit_loglik_grad(theta: np.ndarray, u: np.ndarray, v: int) -> np.ndarray:
    """Gradient of the probit log likelihood for a single observation (u, v)."""
    theta = np.asarray(theta, dtype=float)
    u = np.asarray(u, dtype=float)
    margin = float(u @ theta)
    return float(_probit_scores(margin, v)) * u


def probit_loglik(theta: np.ndarray, u: np.ndarray, v) -> float:
    """Probit log likelihood of observations (u, v) at theta."""
    margins = np.asarray(u, dtype=float) @ np.asarray(theta, dtype=float)
    signs = 2.0 * np.asarray(v, dtype=float) - 1.0
    return float(np.sum(log_ndtr(signs * margins)))


def prior_grad(theta: np.ndarray, sigma2: float) -> np.ndarray:
    """Gradient of the Gaussian prior log density: -theta / sigma^2."""
    if sigma2 <= 0:
        raise ValueError(f"prior variance must be positive, got {sigma2}")
    return -np.asarray(theta, dtype=float) / sigma2


def log_joint_grad(
    theta: np.ndarray,
    covariates: np.ndarray,
    labels: np.ndarray,
    n_total: int,
    sigma2: float,
) -> np.ndarray:
    """Minibatch estimate of the log-joint gradient for the probit model.

    Returns prior_grad + (N / N_b) sum over the batch of per-point likelihood
    gradients.  ``theta`` may be a single vector (d,) or a stack (S, d).
    """
    theta = np.asarray(theta, dtype=float)
    u = np.atleast_2d(np.asarray(covariates, dtype=float))
    v = np.atleast_1d(labels)
    if u.shape[0] < 1:
        raise ValueError("minibatch must be non-empty")
    if not 1 <= u.shape[0] <= n_total:
        raise ValueError(f"batch size {u.shape[0]} outside [1, {n_total}]")
    single = theta.ndim == 1
    thetas = theta[None, :] if single else theta
    margins = thetas @ u.T  # (S, n_b)
    scores = _probit_scores(margins, v[None, :])
    grads = prior_grad(thetas, sigma2) + (n_total / u.shape[0]) * scores @ u
    return grads[0] if single else grads


# callback factories used by the weight optimizer and the SGLD baseline;
# each maps a stack of samples (S, d) and optional minibatch indices to
# per-sample gradients or log-joint values.


def probit_joint_grad_fn(covariates: np.ndarray, labels: np.ndarray, sigma2: float):
    u = np.asarray(covariates, dtype=float)
    v = np.asarray(labels)

    def grad(thetas: np.ndarray, idx=None) -> np.ndarray:
        if idx is None:
            return log_joint_grad(thetas, u, v, u.shape[0], sigma2)
        return log_joint_grad(thetas, u[idx], v[idx], u.shape[0], sigma2)

    return grad


def probit_log_joint_fn(covariates: np.ndarray, labels: np.ndarray, sigma2: float):
    u = np.asarray(covariates, dtype=float)
    v = np.asarray(labels, dtype=float)
    n = u.shape[0]
    d = u.shape[1]

    def value(thetas: np.ndarray, idx=None) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        ub, vb = (u, v) if idx is None else (u[idx], v[idx])
        margins = thetas @ ub.T
        signs = 2.0 * vb[None, :] - 1.0
        loglik = log_ndtr(signs * margins).sum(axis=1) * (n / ub.shape[0])
        log_prior = -0.5 * np.sum(thetas**2, axis=1) / sigma2 - 0.5 * d * np.log(
            2.0 * np.pi * sigma2
        )
        return log_prior + loglik

    return value


def gaussian_joint_grad_fn(cov: np.ndarray):
    """Gradient callback for a known zero-mean Gaussian target: -C^{-1} theta."""
    precision = np.linalg.inv(_require_symmetric(cov, "covariance"))
    precision = 0.5 * (precision + precision.T)

    def grad(thetas: np.ndarray, idx=None) -> np.ndarray:
        return -np.asarray(thetas, dtype=float) @ precision

    return grad


def gaussian_log_joint_fn(cov: np.ndarray):
    cov = _require_symmetric(cov, "covariance")
    precision = np.linalg.inv(cov)
    precision = 0.5 * (precision + precision.T)
    _, logdet = np.linalg.slogdet(cov)
    const = -0.5 * (cov.shape[0] * _LOG_2PI + logdet)

    def value(thetas: np.ndarray, idx=None) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        quad = np.einsum("sd,de,se->s", thetas, precision, thetas)
        return const - 0.5 * quad

    return value


# ---------------------------------------------------------------------------
# truncated-normal draws
# ---------------------------------------------------------------------------


def _truncated_std_normal_above(alpha: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw Z ~ N(0,1) conditioned on Z > alpha, elementwise."""
    alpha = np.asarray(alpha, dtype=float)
    out = np.empty_like(alpha)

    easy = alpha <= _TAIL_CUTOFF
    if easy.any():
        a = alpha[easy]
        p_below = ndtr(a)
        u = rng.uniform(size=a.shape)
        out[easy] = ndtri(p_below + u * (1.0 - p_below))

    hard = ~easy
    if hard.any():
        # Exponential-proposal rejection for the deep tail (Robert 1995).
        a = alpha[hard]
        lam = 0.5 * (a + np.sqrt(a * a + 4.0))
        draws = np.empty_like(a)
        pending = np.ones(a.shape, dtype=bool)
        while pending.any():
            ap = a[pending]
            lp = lam[pending]
            z = ap + rng.exponential(size=ap.shape) / lp
            accept = rng.uniform(size=ap.shape) <= np.exp(-0.5 * (z - lp) ** 2)
            idx = np.flatnonzero(pending)
            draws[idx[accept]] = z[accept]
            pending[idx[accept]] = False
        out[hard] = draws
    return out


def sample_truncated_normal(
    mean,
    rng: np.random.Generator,
    positive: bool | np.ndarray = True,
) -> np.ndarray:
    """Draw from N(mean, 1) restricted to (0, inf) or (-inf, 0], elementwise.

    Inverse-CDF sampling for boundaries within ``_TAIL_CUTOFF`` standard
    deviations, rejection sampling beyond, so deep-tail draws stay exact and
    never hang.
    """
    mean = np.asarray(mean, dtype=float)
    scalar = mean.ndim == 0
    mean = np.atleast_1d(mean)
    signs = np.where(np.broadcast_to(positive, mean.shape), 1.0, -1.0)
    # X ~ N(m,1) | X > 0 is s * (Z | Z > -s m) + s m with s = sign of the kept side.
    z = _truncated_std_normal_above(-signs * mean, rng)
    draws = signs * (z + signs * mean)
    return float(draws[0]) if scalar else draws


# ---------------------------------------------------------------------------
# probit samplers
# ---------------------------------------------------------------------------


def ml_estimate_probit(shard: ProbitShard, max_iter: int = 200) -> np.ndarray:
    """Gradient-ascent probit maximum-likelihood point, used to start Gibbs chains.

    Separable shards have no finite maximizer; when the iterate blows up or
    turns non-finite the zero vector is returned instead.
    """
    u, v = shard.covariates, shard.labels
    theta = np.zeros(shard.dim)
    step = 1.0
    value = probit_loglik(theta, u, v)
    for _ in range(max_iter):
        grad = _probit_scores(u @ theta, v) @ u
        if np.linalg.norm(grad) < 1e-8 * shard.size:
            break
        for _ in range(30):
            cand = theta + step * grad / shard.size
            cand_value = probit_loglik(cand, u, v)
            if np.isfinite(cand_value) and cand_value > value:
                theta, value = cand, cand_value
                step *= 1.5
                break
            step *= 0.5
        else:
            break
    if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > 1e3:
        return np.zeros(shard.dim)
    return theta


def _gibbs_coefficient_cov(shard: ProbitShard) -> np.ndarray:
    """(sum_n u_n u_n^T + I / sigma^2)^{-1}, ridged when badly conditioned."""
    u = shard.covariates
    a = u.T @ u + np.eye(shard.dim) / shard.prior_variance
    w = np.linalg.eigvalsh(a)
    if w[0] <= 0 or w[-1] / w[0] > _COND_CAP:
        a = a + (_RIDGE_RTOL * np.trace(a) / shard.dim) * np.eye(shard.dim)
    c = np.linalg.inv(a)
    return 0.5 * (c + c.T)


def gibbs_probit_sampler(
    shard: ProbitShard,
    n_samples: int,
    rng: np.random.Generator,
    burn_in: int = 100,
    init: np.ndarray | None = None,
) -> np.ndarray:
    """Latent-variable Gibbs sampler for the probit posterior of a shard.

    Runs ``burn_in + n_samples`` sweeps and returns the last ``n_samples``
    coefficient draws, shape (n_samples, d).  Each sweep resamples every
    latent from its truncated Gaussian (positive side for label 1, negative
    for label 0) and then the coefficients from their Gaussian conditional,
    whose covariance is constant across sweeps and factored once.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    u, v = shard.covariates, shard.labels
    cov = _gibbs_coefficient_cov(shard)
    factor = psd_factor(cov)
    positive = v == 1

    theta = ml_estimate_probit(shard) if init is None else np.asarray(init, dtype=float)
    state = GibbsState(theta=theta, latents=np.zeros(shard.size))
    out = np.empty((n_samples, shard.dim))
    for sweep in range(burn_in + n_samples):
        state.latents = sample_truncated_normal(u @ state.theta, rng, positive=positive)
        noise = factor @ rng.standard_normal(shard.dim)
        state.theta = cov @ (u.T @ state.latents) + noise
        state.sweep = sweep + 1
        if sweep >= burn_in:
            out[sweep - burn_in] = state.theta
    return out


# ---------------------------------------------------------------------------
# entropy estimation
# ---------------------------------------------------------------------------


def knn_entropy(samples: np.ndarray, k: int = 3) -> float:
    """Kozachenko-Leonenko nearest-neighbor differential entropy estimate."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] <= k:
        raise ValueError(f"need more than k={k} samples, got shape {x.shape}")
    n, d = x.shape
    dist, _ = cKDTree(x).query(x, k=k + 1)
    eps = np.maximum(dist[:, -1], 1e-300)
    log_unit_ball = 0.5 * d * np.log(np.pi) - gammaln(0.5 * d + 1.0)
    return float(d * np.mean(np.log(eps)) + log_unit_ball + digamma(n) - digamma(k))
