"""End-to-end experiment execution.

One trial covers: data generation and partitioning, local posterior
sampling at the workers, power scaling, simulated transmission over the
configured number of communication blocks (S = T/K received samples per
worker under orthogonal access, S = T superposed samples otherwise),
aggregation or weight optimization, and metric evaluation.  Every source of
randomness is a counter-based substream keyed by (master seed, trial,
stage), so adding schemes or running trials in parallel never perturbs
existing streams.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .. import __version__
from ..aggregators import WeightSet, apply_weights, gcmc_weights, wgcmc_noma, wgcmc_oma
from ..baselines import SgldSchedule, best_single_worker, sgld_run
from ..channel import (
    ChannelModel,
    PowerConfig,
    noma_encoding,
    oma_encodings,
    power_scale,
    transmit_noma,
    transmit_oma,
)
from ..metrics import ReferencePosterior, kl_ensemble, second_order_error
from ..posteriors import (
    ProbitShard,
    gaussian_global_covariance,
    gaussian_joint_grad_fn,
    gaussian_log_joint_fn,
    gibbs_probit_sampler,
    knn_entropy,
    probit_joint_grad_fn,
    probit_log_joint_fn,
)
from ..wvcmc import init_weights, run_wvcmc
from .config import ExperimentConfig, resolved_dict
from .data import LabeledDataset, gen_gaussian_scenario, gen_probit_data, ingest_csv, partition

RESULT_COLUMNS = (
    "scheme",
    "snr_db",
    "t",
    "k",
    "zeta",
    "trial",
    "err2",
    "kl",
    "computed_gradients",
    "wall_ms",
    "seed",
)

# Stage identifiers for the counter-based seed split; values are stable so
# new stages can only be appended, never renumbered.
_STAGES = {
    "data": 0,
    "reference": 1,
    "partition": 2,
    "worker": 3,
    "oma-noise": 4,
    "noma-noise": 5,
    "wvcmc-oma": 6,
    "wvcmc-noma": 7,
    "sgld": 8,
    "audit": 9,
}


def substream(master_seed: int, trial: int, stage: str, extra: int = 0) -> Generator:
    """Deterministic per-(trial, stage) random stream."""
    return Generator(Philox(SeedSequence([master_seed, trial, _STAGES[stage], extra])))


@dataclass(frozen=True)
class SchemeOutput:
    samples: np.ndarray
    computed_gradients: int = 0


def _effective_eta(params, n_workers: int) -> float:
    return params.eta / n_workers if params.eta_div_k else params.eta


class _TrialRunner:
    """Shared wiring for one trial: receptions are built once and reused by
    every scheme that consumes the same access mode."""

    def __init__(self, config: ExperimentConfig, trial: int):
        self.config = config
        self.trial = trial
        self.dim = config.dim
        k = config.n_workers
        if config.channel_kind == "identity":
            self.reps = 1
            self.channel = ChannelModel("identity", self.dim, self.dim)
        else:
            self.reps = 2
            self.channel = ChannelModel("iid-gaussian", 2 * self.dim + 2, 2 * self.dim)
        self.power = PowerConfig.from_snr_db(config.snr_db, self.channel.m_r)
        self.gram = self.channel.mean_inverse_gram()
        self.n0 = self.power.n0
        self.s_oma = config.s_oma if config.uses_oma else 0
        self.s_noma = config.s_noma if config.uses_noma else 0
        self.s_max = max(self.s_oma, self.s_noma)
        self.needs_entropies = any(name.startswith("wvcmc") for name in config.schemes)

    # subclasses fill these in
    worker_samples: np.ndarray  # (s_max, K, d)
    reference: ReferencePosterior
    joint_grad = None
    log_joint = None
    entropies: np.ndarray | None = None
    n_data: int | None = None
    test_covariates: np.ndarray | None = None

    def prepare_channels(self):
        cfg, k = self.config, self.config.n_workers
        if self.s_max == 0:
            self._decoded = None
            self._gcmc_fit = None
            return
        if self.s_oma:
            thetas = self.worker_samples[: self.s_oma]
            scales = [
                power_scale(thetas[:, j], self.gram, self.reps, self.power.p) for j in range(k)
            ]
            self.oma_enc = oma_encodings(scales, self.dim, self.reps)
            self.oma_scales = np.asarray(scales)
            self.ys_oma = transmit_oma(
                thetas, self.oma_enc, self.n0, substream(cfg.seed, self.trial, "oma-noise")
            )
        if self.s_noma:
            thetas = self.worker_samples[: self.s_noma]
            scales = [
                power_scale(thetas[:, j], self.gram, self.reps, self.power.p) for j in range(k)
            ]
            self.noma_enc = noma_encoding(scales, self.dim, self.reps)
            self.noma_min_p = float(min(scales))
            self.ys_noma = transmit_noma(
                thetas, self.noma_enc, self.n0, substream(cfg.seed, self.trial, "noma-noise")
            )
        self._decoded = None
        self._gcmc_fit = None

    def decoded(self) -> np.ndarray:
        """Per-worker decoded signals E_k^+ y_k, shape (S, K, d)."""
        if self._decoded is None:
            out = np.empty((self.s_oma, self.config.n_workers, self.dim))
            for j, enc in enumerate(self.oma_enc):
                out[:, j, :] = enc.decode(self.ys_oma[:, j, :])
            self._decoded = out
        return self._decoded

    def gcmc_fit(self) -> WeightSet:
        if self._gcmc_fit is None:
            self._gcmc_fit = gcmc_weights(self.decoded())
        return self._gcmc_fit

    # ------------------------------------------------------------------
    # scheme implementations
    # ------------------------------------------------------------------

    def run_scheme(self, name: str, params) -> SchemeOutput:
        if name == "gcmc":
            square = self.gcmc_fit()
            full = init_weights("oma", self.config.scenario, self.oma_enc, self.config.n_workers, square)
            return SchemeOutput(apply_weights(full, self.ys_oma))
        if name == "wgcmc-oma":
            ws = wgcmc_oma(self.ys_oma, self.oma_scales, self.n0, self.reps)
            return SchemeOutput(apply_weights(ws, self.ys_oma))
        if name == "wgcmc-noma":
            ws = wgcmc_noma(
                self.ys_noma, self.config.n_workers, self.noma_min_p, self.n0, self.reps
            )
            return SchemeOutput(apply_weights(ws, self.ys_noma))
        if name == "wvcmc-oma":
            return self._run_wvcmc("oma", params)
        if name == "wvcmc-noma":
            return self._run_wvcmc("noma", params)
        if name == "sgld":
            return self._run_sgld(params)
        if name == "best-single":
            metric = lambda s: second_order_error(s, self.reference.moment())
            _, samples = best_single_worker(
                np.swapaxes(self.decoded(), 0, 1), metric
            )
            return SchemeOutput(samples)
        raise ValueError(f"unknown scheme {name!r}")

    def _run_wvcmc(self, mode: str, params) -> SchemeOutput:
        cfg = self.config
        k = cfg.n_workers
        eta = _effective_eta(params, k)
        if mode == "oma":
            init = init_weights("oma", cfg.scenario, self.oma_enc, k, self.gcmc_fit())
            ys, enc, s = self.ys_oma, [e.matrix() for e in self.oma_enc], self.s_oma
        else:
            init = init_weights("noma", cfg.scenario, self.noma_enc, k)
            ys, enc, s = self.ys_noma, self.noma_enc.matrix(), self.s_noma
        result = run_wvcmc(
            mode,
            ys,
            init,
            enc,
            self.n0,
            self.joint_grad,
            eta,
            params.t_m,
            substream(cfg.seed, self.trial, f"wvcmc-{mode}"),
            n_workers=k,
            n_data=self.n_data,
            minibatch_size=params.n_b,
            log_joint=self.log_joint,
            subposterior_entropies=self.entropies,
        )
        batch = params.n_b if params.n_b is not None else (self.n_data or 1)
        return SchemeOutput(result.samples, computed_gradients=params.t_m * s * batch)

    def _run_sgld(self, params) -> SchemeOutput:
        rng = substream(self.config.seed, self.trial, "sgld")
        schedule = SgldSchedule(
            alpha=params.alpha,
            beta=params.beta,
            gamma=params.gamma,
            n_iterations=params.iterations,
            burn_in=params.burn_in,
            minibatch_size=params.n_b if self.n_data is not None else None,
        )
        theta0 = self.sgld_init(rng)
        samples = sgld_run(self.joint_grad, schedule, theta0, rng, n_data=self.n_data)
        batch = schedule.minibatch_size if schedule.minibatch_size is not None else (self.n_data or 1)
        return SchemeOutput(samples, computed_gradients=params.iterations * batch)

    def sgld_init(self, rng: Generator) -> np.ndarray:
        return np.zeros(self.dim)

    def metrics_row(self, name: str, out: SchemeOutput, wall_ms: float) -> dict:
        cfg = self.config
        err2 = second_order_error(out.samples, self.reference.moment())
        kl = ""
        if self.test_covariates is not None and self.reference.samples is not None:
            kl = kl_ensemble(out.samples, self.reference.samples, self.test_covariates)
        return {
            "scheme": name,
            "snr_db": cfg.snr_db,
            "t": cfg.t_blocks,
            "k": cfg.n_workers,
            "zeta": cfg.partition.zeta if cfg.partition.rule == "heterogeneous" else 0.0,
            "trial": self.trial,
            "err2": err2,
            "kl": kl,
            "computed_gradients": out.computed_gradients,
            "wall_ms": wall_ms,
            "seed": cfg.seed,
        }


class _GaussianTrial(_TrialRunner):
    def __init__(self, config: ExperimentConfig, trial: int):
        super().__init__(config, trial)
        subs = gen_gaussian_scenario(config.n_workers, self.dim, config.subposteriors)
        self.global_cov = gaussian_global_covariance([s.cov for s in subs])
        # Zero-mean target: the exact covariance doubles as the second moment.
        self.reference = ReferencePosterior(second_moment=self.global_cov)
        if self.s_max:
            draws = [
                subs[k].sample(substream(config.seed, trial, "worker", k), size=self.s_max)
                for k in range(config.n_workers)
            ]
            self.worker_samples = np.stack(draws, axis=1)
        self.joint_grad = gaussian_joint_grad_fn(self.global_cov)
        self.log_joint = gaussian_log_joint_fn(self.global_cov)
        self.entropies = np.asarray([s.entropy() for s in subs])
        self.n_data = None
        self.test_covariates = None
        self.prepare_channels()


class _ProbitTrial(_TrialRunner):
    def __init__(self, config: ExperimentConfig, trial: int):
        super().__init__(config, trial)
        rng_data = substream(config.seed, trial, "data")
        dataset, test_u = self._load_data(config, rng_data)
        self.dataset = dataset
        self.test_covariates = test_u
        self.n_data = dataset.size

        ref_rng = substream(config.seed, trial, "reference")
        global_shard = ProbitShard(dataset.covariates, dataset.labels, config.prior_variance)
        ref_samples = gibbs_probit_sampler(
            global_shard, config.reference.n_samples, ref_rng, burn_in=config.reference.burn_in
        )
        self.reference = ReferencePosterior(samples=ref_samples)

        shards_idx = partition(
            dataset,
            config.n_workers,
            substream(config.seed, trial, "partition"),
            rule=config.partition.rule,
            zeta=config.partition.zeta,
        )
        k = config.n_workers
        shards = [
            ProbitShard(
                dataset.covariates[idx], dataset.labels[idx], k * config.prior_variance
            )
            for idx in shards_idx
        ]
        if self.s_max:
            draws = [
                gibbs_probit_sampler(
                    shards[j],
                    self.s_max,
                    substream(config.seed, trial, "worker", j),
                    burn_in=config.gibbs_burn_in,
                )
                for j in range(k)
            ]
            self.worker_samples = np.stack(draws, axis=1)
        self.joint_grad = probit_joint_grad_fn(
            dataset.covariates, dataset.labels, config.prior_variance
        )
        self.log_joint = probit_log_joint_fn(
            dataset.covariates, dataset.labels, config.prior_variance
        )
        self.entropies = (
            np.asarray([knn_entropy(self.worker_samples[:, j, :]) for j in range(k)])
            if self.s_max and self.needs_entropies
            else None
        )
        self.prepare_channels()

    @staticmethod
    def _load_data(config: ExperimentConfig, rng: Generator):
        if config.scenario == "probit-synthetic":
            dataset = gen_probit_data(
                config.data.n, config.dim, config.data.theta_star, rng
            )
            test_u = (
                rng.standard_normal((config.data.n_test, config.dim))
                if config.data.n_test > 0
                else None
            )
            return dataset, test_u
        full = ingest_csv(config.csv.path, config.csv.label_column, config.csv.pca_dim)
        if config.csv.n_test > 0:
            if config.csv.n_test >= full.size:
                raise ValueError("csv n_test must leave at least one training row")
            order = rng.permutation(full.size)
            test = order[: config.csv.n_test]
            train = np.sort(order[config.csv.n_test :])
            dataset = LabeledDataset(
                full.covariates[train], full.labels[train], note=full.note
            )
            return dataset, full.covariates[test]
        return full, None

    def sgld_init(self, rng: Generator) -> np.ndarray:
        # Randomized start from the prior.
        return np.sqrt(self.config.prior_variance) * rng.standard_normal(self.dataset.dim)


def run_trial(config: ExperimentConfig, trial: int) -> list[dict]:
    """All configured schemes for one trial, in config order."""
    if config.scenario == "gaussian-toy":
        runner = _GaussianTrial(config, trial)
    else:
        runner = _ProbitTrial(config, trial)
    rows = []
    for name, params in config.schemes.items():
        start = time.perf_counter()
        out = runner.run_scheme(name, params)
        wall_ms = 1000.0 * (time.perf_counter() - start)
        rows.append(runner.metrics_row(name, out, wall_ms))
    return rows


def run_experiment(config: ExperimentConfig, parallel: int = 1) -> list[dict]:
    """Run every trial and scheme; rows come back ordered by (trial, scheme)."""
    trials = range(config.trials)
    if parallel > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            per_trial = list(pool.map(run_trial, [config] * config.trials, trials))
    else:
        per_trial = [run_trial(config, t) for t in trials]
    return [row for rows in per_trial for row in rows]


_SWEEP_AXES = ("snr", "t", "k", "zeta")


def apply_axis(config: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    axis = axis.lower()
    if axis == "snr":
        return replace(config, snr_db=float(value))
    if axis == "t":
        return replace(config, t_blocks=int(value))
    if axis == "k":
        return replace(config, n_workers=int(value))
    if axis == "zeta":
        return replace(
            config, partition=replace(config.partition, rule="heterogeneous", zeta=float(value))
        )
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {_SWEEP_AXES}")


def sweep(config: ExperimentConfig, axis: str, values, parallel: int = 1) -> list[dict]:
    """Repeat the experiment along one axis with shared per-trial seeds."""
    rows = []
    for value in values:
        rows.extend(run_experiment(apply_axis(config, axis, value), parallel=parallel))
    return rows


# ---------------------------------------------------------------------------
# result output
# ---------------------------------------------------------------------------


def write_rows(path: str, rows: list[dict]) -> None:
    """Append result rows to a CSV file, creating it with a header if absent."""
    new_file = not os.path.exists(path)
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        if new_file:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)


def manifest_path(out_path: str) -> str:
    base, _ = os.path.splitext(out_path)
    return base + ".manifest.json"


def write_manifest(out_path: str, config: ExperimentConfig, extra: dict | None = None) -> None:
    """Record the resolved config and library version next to the result CSV."""
    doc = {
        "version": __version__,
        "master_seed": config.seed,
        "config": resolved_dict(config),
    }
    if extra:
        doc.update(extra)
    with open(manifest_path(out_path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
