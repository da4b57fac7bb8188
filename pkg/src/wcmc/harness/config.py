"""Experiment configuration as a JSON document with fail-fast validation.

Unknown keys are rejected at every level so config typos surface
immediately instead of silently falling back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .data import DEFAULT_THETA_STAR

SCENARIOS = ("gaussian-toy", "probit-synthetic", "probit-csv")
SCHEME_NAMES = (
    "gcmc",
    "wgcmc-oma",
    "wgcmc-noma",
    "wvcmc-oma",
    "wvcmc-noma",
    "sgld",
    "best-single",
)
OMA_SCHEMES = ("gcmc", "wgcmc-oma", "wvcmc-oma", "best-single")
NOMA_SCHEMES = ("wgcmc-noma", "wvcmc-noma")


class ConfigError(ValueError):
    pass


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys {unknown} in {where}; allowed: {sorted(allowed)}")


@dataclass(frozen=True)
class WvcmcParams:
    eta: float
    t_m: int
    n_b: int | None = None  # None means full batch
    eta_div_k: bool = False  # scale the step size as eta / K (worker-count sweeps)

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigError(f"eta must be non-negative, got {self.eta}")
        if self.t_m < 0:
            raise ConfigError(f"t_m must be non-negative, got {self.t_m}")
        if self.n_b is not None and self.n_b < 1:
            raise ConfigError(f"n_b must be positive, got {self.n_b}")


@dataclass(frozen=True)
class SgldParams:
    alpha: float = 1e-3
    beta: float = 1.0
    gamma: float = 0.7
    n_b: int | None = 500
    iterations: int = 20000
    burn_in: int = 2000

    def __post_init__(self):
        if not 0.5 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0.5, 1], got {self.gamma}")
        if self.beta <= 0 or self.alpha <= 0:
            raise ConfigError("alpha and beta must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("burn_in must be smaller than iterations")


@dataclass(frozen=True)
class PartitionParams:
    rule: str = "equal"
    zeta: float = 0.0

    def __post_init__(self):
        if self.rule not in ("equal", "heterogeneous"):
            raise ConfigError(f"unknown partition rule {self.rule!r}")
        if self.zeta < 0:
            raise ConfigError(f"zeta must be non-negative, got {self.zeta}")


@dataclass(frozen=True)
class DataParams:
    n: int = 8500
    theta_star: tuple = DEFAULT_THETA_STAR
    n_test: int = 1000

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.n_test < 0:
            raise ConfigError("n_test must be non-negative")
        object.__setattr__(self, "theta_star", tuple(float(x) for x in self.theta_star))


@dataclass(frozen=True)
class CsvParams:
    path: str
    label_column: str = "label"
    pca_dim: int | None = None
    n_test: int = 0


@dataclass(frozen=True)
class ReferenceParams:
    n_samples: int = 20000
    burn_in: int = 100

    def __post_init__(self):
        if self.n_samples < 1000:
            raise ConfigError("reference sampler needs at least 1000 samples")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be non-negative")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    n_workers: int
    t_blocks: int
    snr_db: float
    trials: int
    seed: int
    schemes: dict = field(default_factory=dict)
    dim: int = 5
    channel: str | None = None  # default: identity for the toy, iid-gaussian otherwise
    subposteriors: str = "heterogeneous"  # toy covariance family
    prior_variance: float = 1.0
    partition: PartitionParams = field(default_factory=PartitionParams)
    data: DataParams = field(default_factory=DataParams)
    csv: CsvParams | None = None
    reference: ReferenceParams = field(default_factory=ReferenceParams)
    gibbs_burn_in: int = 100
    output: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.n_workers < 1:
            raise ConfigError("n_workers must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        if self.t_blocks < 1:
            raise ConfigError("t_blocks must be positive")
        if self.prior_variance <= 0:
            raise ConfigError("prior_variance must be positive")
        if self.dim < 1:
            raise ConfigError("dim must be positive")
        unknown = sorted(set(self.schemes) - set(SCHEME_NAMES))
        if unknown:
            raise ConfigError(f"unknown schemes {unknown}; allowed: {list(SCHEME_NAMES)}")
        if not self.schemes:
            raise ConfigError("at least one scheme is required")
        if self.uses_oma and self.t_blocks < self.n_workers:
            raise ConfigError(
                f"orthogonal access needs t_blocks >= n_workers "
                f"(got T={self.t_blocks}, K={self.n_workers})"
            )
        if self.scenario == "probit-csv" and self.csv is None:
            raise ConfigError("probit-csv runs need a csv section")
        if self.channel is not None and self.channel not in ("identity", "iid-gaussian"):
            raise ConfigError(f"unknown channel kind {self.channel!r}")
        if self.scenario == "gaussian-toy":
            for name in ("wvcmc-oma", "wvcmc-noma"):
                params = self.schemes.get(name)
                if params is not None and params.n_b is not None:
                    raise ConfigError(f"{name}: the toy scenario has no data set to minibatch")

    @property
    def uses_oma(self) -> bool:
        return any(name in self.schemes for name in OMA_SCHEMES)

    @property
    def uses_noma(self) -> bool:
        return any(name in self.schemes for name in NOMA_SCHEMES)

    @property
    def channel_kind(self) -> str:
        if self.channel is not None:
            return self.channel
        return "identity" if self.scenario == "gaussian-toy" else "iid-gaussian"

    @property
    def s_oma(self) -> int:
        return self.t_blocks // self.n_workers

    @property
    def s_noma(self) -> int:
        return self.t_blocks


def _parse_scheme(name: str, section: dict):
    if name in ("gcmc", "best-single", "wgcmc-oma", "wgcmc-noma"):
        _check_keys(section, (), f"schemes.{name}")
        return None
    if name in ("wvcmc-oma", "wvcmc-noma"):
        _check_keys(section, ("eta", "t_m", "n_b", "eta_div_k"), f"schemes.{name}")
        if "eta" not in section or "t_m" not in section:
            raise ConfigError(f"schemes.{name} requires eta and t_m")
        return WvcmcParams(**section)
    if name == "sgld":
        _check_keys(
            section, ("alpha", "beta", "gamma", "n_b", "iterations", "burn_in"), "schemes.sgld"
        )
        return SgldParams(**section)
    raise ConfigError(f"unknown scheme {name!r}; allowed: {list(SCHEME_NAMES)}")


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a parsed JSON document into an ExperimentConfig."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    allowed = (
        "scenario",
        "n_workers",
        "t_blocks",
        "snr_db",
        "trials",
        "seed",
        "schemes",
        "dim",
        "channel",
        "subposteriors",
        "prior_variance",
        "partition",
        "data",
        "csv",
        "reference",
        "gibbs_burn_in",
        "output",
    )
    _check_keys(doc, allowed, "config")
    for key in ("scenario", "n_workers", "t_blocks", "snr_db", "trials", "seed", "schemes"):
        if key not in doc:
            raise ConfigError(f"config is missing required key {key!r}")
    schemes_doc = doc["schemes"]
    if not isinstance(schemes_doc, dict):
        raise ConfigError("schemes must be an object mapping scheme names to parameters")
    schemes = {name: _parse_scheme(name, section or {}) for name, section in schemes_doc.items()}

    def sub(key, cls, allowed_keys):
        section = doc.get(key)
        if section is None:
            return cls() if key != "csv" else None
        _check_keys(section, allowed_keys, key)
        return cls(**section)

    return ExperimentConfig(
        scenario=doc["scenario"],
        n_workers=int(doc["n_workers"]),
        t_blocks=int(doc["t_blocks"]),
        snr_db=float(doc["snr_db"]),
        trials=int(doc["trials"]),
        seed=int(doc["seed"]),
        schemes=schemes,
        dim=int(doc.get("dim", 5)),
        channel=doc.get("channel"),
        subposteriors=doc.get("subposteriors", "heterogeneous"),
        prior_variance=float(doc.get("prior_variance", 1.0)),
        partition=sub("partition", PartitionParams, ("rule", "zeta")),
        data=sub("data", DataParams, ("n", "theta_star", "n_test")),
        csv=sub("csv", CsvParams, ("path", "label_column", "pca_dim", "n_test")),
        reference=sub("reference", ReferenceParams, ("n_samples", "burn_in")),
        gibbs_burn_in=int(doc.get("gibbs_burn_in", 100)),
        output=doc.get("output"),
    )


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc)


def resolved_dict(config: ExperimentConfig) -> dict:
    """Plain-JSON view of a config, with all defaults filled in."""
    import dataclasses

    def convert(value):
        if isinstance(value, dict):
            return {k: convert(v) for k, v in value.items()}
        if isinstance(value, tuple):
            return [convert(v) for v in value]
        return value

    return convert(dataclasses.asdict(config))
