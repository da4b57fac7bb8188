"""Acceptance suite: one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s``.  Every test pins the
tolerance it asserts; the slow end-to-end criteria also assert their wall
-clock budgets.
"""

import time

import numpy as np
from scipy.special import log_ndtr, ndtr

from wcmc import aggregators, baselines, channel, posteriors, wvcmc
from wcmc.harness import config as cfg_mod
from wcmc.harness import runner


def _elapsed(start):
    return time.perf_counter() - start


def _report(num, message, start, budget_s):
    took = _elapsed(start)
    assert took < budget_s, f"criterion {num} exceeded its {budget_s}s budget ({took:.1f}s)"
    print(f"PASS criterion {num:2d}: {message} [{took:.1f}s]")


def random_pd(rng, d, floor=0.2):
    b = rng.standard_normal((d, d))
    return b @ b.T / d + floor * np.eye(d)


def mean_errs(doc, schemes):
    rows = runner.run_experiment(cfg_mod.parse_config(doc))
    return {
        s: float(np.mean([r["err2"] for r in rows if r["scheme"] == s])) for s in schemes
    }


def test_criterion_01_oma_weight_identity():
    """Closed-form channel-aware OMA weights satisfy the output-law equation."""
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(1, 6))
        d = int(rng.integers(1, 6))
        covs = [random_pd(rng, d) for _ in range(k)]
        p = rng.uniform(0.2, 3.0, size=k)
        n0 = float(rng.choice([0.1, 1.0]))
        w = aggregators.wgcmc_oma_weights_exact(covs, p, n0)
        lhs = sum(w[j] @ (p[j] * covs[j] + n0 * np.eye(d)) @ w[j].T for j in range(k))
        rhs = np.linalg.inv(sum(np.linalg.inv(c) for c in covs))
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    assert worst < 1e-8, f"max-entry identity error {worst:.2e}"
    _report(1, f"OMA weight identity holds to {worst:.1e} over 50 instances", start, 1.0)


def test_criterion_02_noma_weight_identity():
    """Closed-form NOMA weight maps the superposed law onto the product posterior."""
    start = time.perf_counter()
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(1, 6))
        d = int(rng.integers(1, 6))
        cov0 = random_pd(rng, d)
        min_p = float(rng.uniform(0.2, 3.0))
        n0 = float(rng.choice([0.1, 1.0]))
        w = aggregators.wgcmc_noma_weight_exact(cov0, k, min_p, n0)
        lhs = w @ (k * min_p * cov0 + n0 * np.eye(d)) @ w.T
        worst = max(worst, float(np.abs(lhs - cov0 / k).max()))
    assert worst < 1e-8, f"max-entry identity error {worst:.2e}"
    _report(2, f"NOMA weight identity holds to {worst:.1e} over 50 instances", start, 1.0)


def test_criterion_03_block_count_trend():
    """Channel-aware consensus converges with block count; plain consensus stalls."""
    start = time.perf_counter()
    base = {
        "scenario": "gaussian-toy",
        "n_workers": 10,
        "t_blocks": 200,
        "snr_db": 5.0,
        "trials": 20,
        "seed": 2024,
        "schemes": {"wgcmc-oma": {}},
    }
    small = mean_errs(base, ["wgcmc-oma"])["wgcmc-oma"]
    big_doc = dict(base, t_blocks=20_000, schemes={"gcmc": {}, "wgcmc-oma": {}})
    big = mean_errs(big_doc, ["gcmc", "wgcmc-oma"])
    assert big["wgcmc-oma"] < small / 3.0, (small, big)
    assert big["wgcmc-oma"] < big["gcmc"], big
    _report(
        3,
        f"err2 {small:.3f} (T=200) -> {big['wgcmc-oma']:.3f} (T=20000), "
        f"gcmc {big['gcmc']:.3f}",
        start,
        120.0,
    )


def test_criterion_04_snr_robustness():
    """Variational weights stay flat in SNR and beat the closed-form rules at 0 dB."""
    start = time.perf_counter()
    results = {}
    schemes = {
        "gcmc": {},
        "wgcmc-oma": {},
        "wgcmc-noma": {},
        "wvcmc-oma": {"eta": 5e-3, "t_m": 300},
        "wvcmc-noma": {"eta": 1e-3, "t_m": 30},
    }
    for snr in (0.0, 10.0, 20.0):
        doc = {
            "scenario": "gaussian-toy",
            "n_workers": 10,
            "t_blocks": 2000,
            "snr_db": snr,
            "trials": 20,
            "seed": 99,
            "schemes": schemes,
        }
        results[snr] = mean_errs(doc, list(schemes))
    for mode in ("wvcmc-oma", "wvcmc-noma"):
        assert results[0.0][mode] < 2.0 * results[20.0][mode], (mode, results)
    wv_at_zero = max(results[0.0]["wvcmc-oma"], results[0.0]["wvcmc-noma"])
    baselines_at_zero = min(
        results[0.0]["gcmc"], results[0.0]["wgcmc-oma"], results[0.0]["wgcmc-noma"]
    )
    assert wv_at_zero < baselines_at_zero, results[0.0]
    _report(
        4,
        f"wvcmc err2 at 0dB <= {wv_at_zero:.3f} < best closed-form {baselines_at_zero:.3f}",
        start,
        600.0,
    )


def test_criterion_05_entropy_bounds():
    """Both entropy lower bounds are dominated by the exact Gaussian entropy."""
    start = time.perf_counter()
    rng = np.random.default_rng(105)
    for _ in range(100):
        k = int(rng.integers(1, 5))
        d = int(rng.integers(1, 4))
        n0 = float(rng.uniform(0.05, 1.0))
        covs = [random_pd(rng, d) for _ in range(k)]
        ents = [posteriors.GaussianSubposterior(c).entropy() for c in covs]
        encs = [
            channel.RepetitionEncoding(d, 1, float(rng.uniform(0.5, 2.0)))
            for _ in range(k)
        ]
        weights = np.stack(
            [np.eye(d) + 0.15 * rng.standard_normal((d, d)) for _ in range(k)]
        )
        out_cov = sum(
            w @ (e.matrix() @ c @ e.matrix().T + n0 * np.eye(d)) @ w.T
            for w, e, c in zip(weights, encs, covs)
        )
        truth = 0.5 * np.linalg.slogdet(2 * np.pi * np.e * out_cov)[1]
        bound = wvcmc.entropy_lb_oma(weights, [e.matrix() for e in encs], n0, ents)
        assert truth >= bound - 1e-9

        shared = channel.RepetitionEncoding(d, 1, float(rng.uniform(0.5, 2.0)))
        weight = np.eye(d) / k + 0.1 * rng.standard_normal((d, d))
        inner = shared.matrix() @ sum(covs) @ shared.matrix().T + n0 * np.eye(d)
        truth_noma = 0.5 * np.linalg.slogdet(2 * np.pi * np.e * weight @ inner @ weight.T)[1]
        bound_noma = wvcmc.entropy_lb_noma(weight, shared.matrix(), n0, k, ents)
        assert truth_noma >= bound_noma - 1e-9
    _report(5, "entropy bounds dominated by exact Gaussian entropies (100 configs)", start, 1.0)


def test_criterion_06_gradient_fidelity():
    """Analytic weight gradients match finite differences of the objective."""
    start = time.perf_counter()
    rng = np.random.default_rng(106)
    d, k, s = 3, 3, 5
    h = 1e-6
    for _ in range(20):
        encs = [channel.RepetitionEncoding(d, 1, float(rng.uniform(0.5, 2.0))) for _ in range(k)]
        mats = [e.matrix() for e in encs]
        weights = np.stack([np.eye(d) + 0.15 * rng.standard_normal((d, d)) for _ in range(k)])
        ys = rng.standard_normal((s, k, d))
        n0 = float(rng.uniform(0.1, 1.0))
        ents = rng.uniform(0.5, 2.0, size=k)
        u = rng.standard_normal((12, d))
        v = (rng.uniform(size=12) < 0.5).astype(int)
        idx = rng.choice(12, size=4, replace=False)  # frozen minibatch
        grad_fn = posteriors.probit_joint_grad_fn(u, v, 1.5)
        val_fn = posteriors.probit_log_joint_fn(u, v, 1.5)

        analytic = wvcmc.grad_oma(weights, ys, mats, grad_fn, idx)
        fd = np.zeros_like(analytic)
        for j in range(k):
            for a in range(d):
                for b in range(d):
                    wp, wm = weights.copy(), weights.copy()
                    wp[j, a, b] += h
                    wm[j, a, b] -= h
                    fd[j, a, b] = (
                        wvcmc.free_energy_oma(wp, ys, mats, n0, ents, val_fn, idx)
                        - wvcmc.free_energy_oma(wm, ys, mats, n0, ents, val_fn, idx)
                    ) / (2 * h)
        np.testing.assert_allclose(analytic, fd, rtol=1e-4, atol=1e-8)

        shared = mats[0]
        weight = np.eye(d) / k + 0.1 * rng.standard_normal((d, d))
        ysn = rng.standard_normal((s, d))
        analytic_n = wvcmc.grad_noma(weight, ysn, shared, k, grad_fn, idx)
        fd_n = np.zeros_like(analytic_n)
        for a in range(d):
            for b in range(d):
                wp, wm = weight.copy(), weight.copy()
                wp[a, b] += h
                wm[a, b] -= h
                fd_n[a, b] = (
                    wvcmc.free_energy_noma(wp, ysn, shared, n0, k, ents, val_fn, idx)
                    - wvcmc.free_energy_noma(wm, ysn, shared, n0, k, ents, val_fn, idx)
                ) / (2 * h)
        np.testing.assert_allclose(analytic_n, fd_n, rtol=1e-4, atol=1e-8)
    _report(6, "weight gradients match finite differences (20 instances, rel 1e-4)", start, 30.0)


def test_criterion_07_sampler_oracles():
    """Gibbs matches grid quadrature; Langevin recovers a known Gaussian."""
    start = time.perf_counter()

    # (a) probit Gibbs vs a 400x400 tensor-grid quadrature oracle
    rng = np.random.default_rng(107)
    u = rng.standard_normal((20, 2))
    truth = np.array([0.8, -0.5])
    v = (rng.uniform(size=20) < ndtr(u @ truth)).astype(int)
    shard = posteriors.ProbitShard(u, v, prior_variance=1.0)
    grid = np.linspace(-6.0, 6.0, 400)
    t1, t2 = np.meshgrid(grid, grid, indexing="ij")
    thetas = np.stack([t1.ravel(), t2.ravel()], axis=1)
    signs = 2.0 * shard.labels - 1.0
    logpost = log_ndtr(signs[None, :] * (thetas @ shard.covariates.T)).sum(axis=1)
    logpost += -0.5 * np.sum(thetas**2, axis=1) / shard.prior_variance
    weights = np.exp(logpost - logpost.max())
    oracle_mean = (weights / weights.sum()) @ thetas
    draws = posteriors.gibbs_probit_sampler(shard, 20_000, np.random.default_rng(13), burn_in=100)
    gibbs_gap = float(np.abs(draws.mean(axis=0) - oracle_mean).max())
    assert gibbs_gap < 0.05, f"posterior mean off by {gibbs_gap:.4f}"

    # (b) Langevin sampling of a known small Gaussian posterior
    mean = np.array([0.3, -0.2])
    cov = 1e-4 * np.array([[1.0, 0.3], [0.3, 1.0]])
    prec = np.linalg.inv(cov)
    grad = lambda th, idx=None: -(th - mean) @ prec
    sched = baselines.SgldSchedule(0.01, 1.0, 0.7, n_iterations=100_000, burn_in=10_000)
    kept = baselines.sgld_run(grad, sched, np.zeros(2), np.random.default_rng(0))
    mean_gap = float(np.abs(kept.mean(axis=0) - mean).max())
    assert mean_gap < 0.02, f"mean off by {mean_gap:.4f}"
    centered = kept - kept.mean(axis=0)
    chat = centered.T @ centered / (kept.shape[0] - 1)
    cov_gap = float(np.linalg.norm(chat - cov) / np.linalg.norm(cov))
    assert cov_gap < 0.05, f"covariance off by {cov_gap:.2%}"
    _report(
        7,
        f"Gibbs-vs-quadrature gap {gibbs_gap:.3f} < 0.05; "
        f"Langevin mean gap {mean_gap:.4f} < 0.02, cov gap {cov_gap:.2%} < 5%",
        start,
        120.0,
    )


def test_criterion_08_power_constraint():
    """Repetition coding meets the block-power budget: equality for per-worker
    channels, inequality for the shared superposition encoder."""
    start = time.perf_counter()
    rng = np.random.default_rng(108)
    p_budget = 2.0
    gram = np.eye(8)
    worker_samples = [rng.standard_normal((1000, 4)) * (0.5 + k) for k in range(3)]
    scales = [channel.power_scale(s, gram, reps=2, p_budget=p_budget) for s in worker_samples]

    for s, scale in zip(worker_samples, scales):
        enc = channel.RepetitionEncoding(4, 2, scale)
        ok, measured = channel.verify_power(
            channel.expected_block_powers(s, gram, enc), p_budget
        )
        assert ok
        assert abs(measured - p_budget) < 1e-6 * p_budget, measured

    shared = channel.noma_encoding(scales, dim=4, reps=2)
    noma_measured = []
    for s in worker_samples:
        ok, measured = channel.verify_power(
            channel.expected_block_powers(s, gram, shared), p_budget
        )
        assert ok and measured <= p_budget * (1 + 1e-6)
        noma_measured.append(measured)
    _report(
        8,
        f"per-worker average power == {p_budget} (rel 1e-6); "
        f"shared-encoder powers <= budget (max {max(noma_measured):.3f})",
        start,
        5.0,
    )


def test_criterion_09_server_compute_efficiency():
    """At a matched server-gradient budget the optimized consensus beats a
    single centralized Langevin chain."""
    start = time.perf_counter()
    n, k, s, t_m = 8500, 20, 50, 50
    budget = t_m * n * s  # full-batch weight updates
    sgld_nb = 500
    base = {
        "scenario": "probit-synthetic",
        "n_workers": k,
        "snr_db": 15.0,
        "trials": 20,
        "seed": 777,
        "dim": 5,
        "data": {"n": n, "n_test": 0},
        "reference": {"n_samples": 12_000, "burn_in": 100},
    }
    noma_doc = dict(base, t_blocks=s, schemes={"wvcmc-noma": {"eta": 1e-6, "t_m": t_m}})
    oma_doc = dict(
        base,
        t_blocks=k * s,
        schemes={
            "wvcmc-oma": {"eta": 1e-6, "t_m": t_m},
            "sgld": {
                "alpha": 0.01,
                "beta": 1.0,
                "gamma": 0.7,
                "n_b": sgld_nb,
                "iterations": budget // sgld_nb,
                "burn_in": 10_000,
            },
        },
    )
    noma = mean_errs(noma_doc, ["wvcmc-noma"])
    oma = mean_errs(oma_doc, ["wvcmc-oma", "sgld"])
    best_wvcmc = min(noma["wvcmc-noma"], oma["wvcmc-oma"])
    assert best_wvcmc < oma["sgld"], (noma, oma)
    _report(
        9,
        f"wvcmc err2 {best_wvcmc:.4f} (noma {noma['wvcmc-noma']:.4f}, "
        f"oma {oma['wvcmc-oma']:.4f}) < sgld {oma['sgld']:.4f} at {budget} gradients",
        start,
        600.0,
    )


def test_criterion_10_consensus_beats_best_single_worker():
    """Optimized consensus over all shards beats the single best worker."""
    start = time.perf_counter()
    doc = {
        "scenario": "probit-synthetic",
        "n_workers": 20,
        "t_blocks": 1000,
        "snr_db": 35.0,
        "trials": 20,
        "seed": 555,
        "dim": 5,
        "data": {"n": 8500, "n_test": 0},
        "reference": {"n_samples": 12_000, "burn_in": 100},
        "schemes": {
            "wvcmc-oma": {"eta": 1e-6, "t_m": 50},
            "best-single": {},
        },
    }
    errs = mean_errs(doc, ["wvcmc-oma", "best-single"])
    assert errs["wvcmc-oma"] < errs["best-single"], errs
    _report(
        10,
        f"wvcmc-oma err2 {errs['wvcmc-oma']:.4f} < best single worker "
        f"{errs['best-single']:.4f} (20 matched trials)",
        start,
        600.0,
    )
