"""Weight-optimizer tests: entropy bounds, gradient oracles, SGD loop behavior."""

import numpy as np
import pytest

from wcmc import channel, posteriors, wvcmc
from wcmc.aggregators import WeightSet, apply_weights


def random_pd(rng, d, floor=0.3):
    b = rng.standard_normal((d, d))
    return b @ b.T / d + floor * np.eye(d)


def gaussian_config(rng, k, d, reps=1):
    """Random well-conditioned weights, encoders, and Gaussian subposteriors."""
    m_r = reps * d
    encs = [channel.RepetitionEncoding(d, reps, float(rng.uniform(0.5, 2.0))) for _ in range(k)]
    weights = np.stack(
        [np.tile(np.eye(d), reps)[:, :m_r] / reps + 0.15 * rng.standard_normal((d, m_r)) for _ in range(k)]
    )
    covs = [random_pd(rng, d) for _ in range(k)]
    return weights, encs, covs


def output_entropy_oma(weights, encs, covs, n0):
    """Closed-form entropy of the Gaussian OMA aggregate."""
    d = weights.shape[1]
    cov = np.zeros((d, d))
    for w, enc, c in zip(weights, encs, covs):
        e = enc.matrix()
        cov += w @ (e @ c @ e.T + n0 * np.eye(e.shape[0])) @ w.T
    return 0.5 * np.linalg.slogdet(2 * np.pi * np.e * cov)[1]


def output_entropy_noma(weight, enc, covs, n0):
    e = enc.matrix()
    inner = e @ sum(covs) @ e.T + n0 * np.eye(e.shape[0])
    cov = weight @ inner @ weight.T
    return 0.5 * np.linalg.slogdet(2 * np.pi * np.e * cov)[1]


class TestEntropyBounds:
    def test_single_worker_scalar_case(self):
        # d=1, W=E=1, N0=1: bound is log(2 sqrt(2 pi e)) / 2 + (1/2) H[p],
        # and the true output entropy log(2 pi e * 2) / 2 dominates it.
        h_sub = 0.5 * np.log(2 * np.pi * np.e)
        bound = wvcmc.entropy_lb_oma(
            np.ones((1, 1, 1)), [np.ones((1, 1))], 1.0, [h_sub]
        )
        expected = 0.5 * np.log(2 * np.sqrt(2 * np.pi * np.e)) + 0.5 * (0.0 + h_sub + 0.0)
        assert bound == pytest.approx(expected)
        truth = 0.5 * np.log(2 * np.pi * np.e * 2.0)
        assert truth >= bound
        # Equal signal and noise power make the bound tight.
        assert truth == pytest.approx(bound)

    def test_scaling_identity(self):
        # Scaling every W_k by c shifts the bound by d log(c), via the
        # log|det W E| and (1/2) log det W W^T terms.
        rng = np.random.default_rng(0)
        weights, encs, covs = gaussian_config(rng, 3, 2)
        ents = [posteriors.GaussianSubposterior(c).entropy() for c in covs]
        mats = [e.matrix() for e in encs]
        base = wvcmc.entropy_lb_oma(weights, mats, 0.5, ents)
        c = 1.7
        scaled = wvcmc.entropy_lb_oma(c * weights, mats, 0.5, ents)
        assert scaled - base == pytest.approx(2 * np.log(c), rel=1e-9)

    def test_oma_bound_below_gaussian_entropy(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            k = int(rng.integers(1, 5))
            d = int(rng.integers(1, 4))
            weights, encs, covs = gaussian_config(rng, k, d)
            ents = [posteriors.GaussianSubposterior(c).entropy() for c in covs]
            n0 = float(rng.uniform(0.05, 1.0))
            bound = wvcmc.entropy_lb_oma(weights, [e.matrix() for e in encs], n0, ents)
            truth = output_entropy_oma(weights, encs, covs, n0)
            assert truth >= bound - 1e-9

    def test_noma_bound_below_gaussian_entropy(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            k = int(rng.integers(1, 5))
            d = int(rng.integers(1, 4))
            enc = channel.RepetitionEncoding(d, 1, float(rng.uniform(0.5, 2.0)))
            weight = np.eye(d) / k + 0.1 * rng.standard_normal((d, d))
            covs = [random_pd(rng, d) for _ in range(k)]
            ents = [posteriors.GaussianSubposterior(c).entropy() for c in covs]
            n0 = float(rng.uniform(0.05, 1.0))
            bound = wvcmc.entropy_lb_noma(weight, enc.matrix(), n0, k, ents)
            truth = output_entropy_noma(weight, enc, covs, n0)
            assert truth >= bound - 1e-9

    def test_noma_k1_scalar_reduction(self):
        h_sub = 0.5 * np.log(2 * np.pi * np.e)
        bound = wvcmc.entropy_lb_noma(np.ones((1, 1)), np.ones((1, 1)), 1.0, 1, [h_sub])
        oma = wvcmc.entropy_lb_oma(np.ones((1, 1, 1)), [np.ones((1, 1))], 1.0, [h_sub])
        assert bound == pytest.approx(oma)

    def test_singular_weight_rejected(self):
        with pytest.raises(np.linalg.LinAlgError):
            wvcmc.entropy_lb_oma(np.zeros((1, 2, 2)), [np.eye(2)], 1.0, [0.0])


class TestGradients:
    def test_oma_matches_finite_difference(self):
        rng = np.random.default_rng(3)
        d, k, s = 3, 3, 5
        for _ in range(20):
            weights, encs, _ = gaussian_config(rng, k, d)
            mats = [e.matrix() for e in encs]
            ys = rng.standard_normal((s, k, d))
            n0 = 0.4
            ents = rng.uniform(0.5, 2.0, size=k)
            u = rng.standard_normal((15, d))
            v = (rng.uniform(size=15) < 0.5).astype(int)
            idx = rng.choice(15, size=5, replace=False)
            grad_fn = posteriors.probit_joint_grad_fn(u, v, 1.5)
            val_fn = posteriors.probit_log_joint_fn(u, v, 1.5)
            analytic = wvcmc.grad_oma(weights, ys, mats, grad_fn, idx)
            h = 1e-6
            for j in (0, k - 1):
                for a in range(d):
                    for b in range(d):
                        wp = weights.copy()
                        wp[j, a, b] += h
                        wm = weights.copy()
                        wm[j, a, b] -= h
                        fd = (
                            wvcmc.free_energy_oma(wp, ys, mats, n0, ents, val_fn, idx)
                            - wvcmc.free_energy_oma(wm, ys, mats, n0, ents, val_fn, idx)
                        ) / (2 * h)
                        assert analytic[j, a, b] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_noma_matches_finite_difference(self):
        rng = np.random.default_rng(4)
        d, k, s = 3, 3, 5
        for _ in range(20):
            enc = channel.RepetitionEncoding(d, 1, float(rng.uniform(0.5, 2.0)))
            weight = np.eye(d) / k + 0.1 * rng.standard_normal((d, d))
            ys = rng.standard_normal((s, d))
            n0 = 0.4
            ents = rng.uniform(0.5, 2.0, size=k)
            u = rng.standard_normal((15, d))
            v = (rng.uniform(size=15) < 0.5).astype(int)
            grad_fn = posteriors.probit_joint_grad_fn(u, v, 1.5)
            val_fn = posteriors.probit_log_joint_fn(u, v, 1.5)
            analytic = wvcmc.grad_noma(weight, ys, enc.matrix(), k, grad_fn, None)
            h = 1e-6
            for a in range(d):
                for b in range(d):
                    wp = weight.copy()
                    wp[a, b] += h
                    wm = weight.copy()
                    wm[a, b] -= h
                    fd = (
                        wvcmc.free_energy_noma(wp, ys, enc.matrix(), n0, k, ents, val_fn, None)
                        - wvcmc.free_energy_noma(wm, ys, enc.matrix(), n0, k, ents, val_fn, None)
                    ) / (2 * h)
                    assert analytic[a, b] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_entropy_only_identity_case(self):
        # Zero data gradient, K=1, W=E=I: the gradient is -(1/2)(I + I) = -I.
        d = 3
        zero_grad = lambda thetas, idx=None: np.zeros_like(thetas)
        ys = np.zeros((4, 1, d))
        grad = wvcmc.grad_oma(np.eye(d)[None], ys, [np.eye(d)], zero_grad, None)
        np.testing.assert_allclose(grad[0], -np.eye(d), atol=1e-12)

    def test_duplicated_blocks_leave_gradient_unchanged(self):
        rng = np.random.default_rng(5)
        d, k = 2, 2
        weights, encs, _ = gaussian_config(rng, k, d)
        mats = [e.matrix() for e in encs]
        ys = rng.standard_normal((3, k, d))
        grad_fn = posteriors.gaussian_joint_grad_fn(np.eye(d))
        g1 = wvcmc.grad_oma(weights, ys, mats, grad_fn, None)
        g2 = wvcmc.grad_oma(weights, np.concatenate([ys, ys]), mats, grad_fn, None)
        np.testing.assert_allclose(g1, g2, atol=1e-12)


class TestRunWvcmc:
    def _setup(self, rng, k=3, d=2, s=40):
        covs = [random_pd(rng, d) for _ in range(k)]
        thetas = np.stack(
            [rng.multivariate_normal(np.zeros(d), c, size=s) for c in covs], axis=1
        )
        encs = channel.oma_encodings([1.0] * k, d, 1)
        n0 = 0.2
        ys = channel.transmit_oma(thetas, encs, n0, rng)
        global_cov = posteriors.gaussian_global_covariance(covs)
        return covs, encs, n0, ys, global_cov

    def test_zero_step_size_keeps_init(self):
        rng = np.random.default_rng(6)
        covs, encs, n0, ys, global_cov = self._setup(rng)
        init = WeightSet("oma", np.stack([np.eye(2) / 3] * 3))
        result = wvcmc.run_wvcmc(
            "oma",
            ys,
            init,
            [e.matrix() for e in encs],
            n0,
            posteriors.gaussian_joint_grad_fn(global_cov),
            step_size=0.0,
            n_iterations=5,
            rng=np.random.default_rng(0),
        )
        np.testing.assert_array_equal(result.weights.matrices, init.matrices)
        np.testing.assert_allclose(result.samples, apply_weights(init, ys))

    def test_fixed_seed_trajectory_identical(self):
        rng = np.random.default_rng(7)
        covs, encs, n0, ys, global_cov = self._setup(rng)
        init = WeightSet("oma", np.stack([np.eye(2) / 3] * 3))
        kwargs = dict(
            encodings=[e.matrix() for e in encs],
            n0=n0,
            joint_grad=posteriors.gaussian_joint_grad_fn(global_cov),
            step_size=1e-3,
            n_iterations=20,
            log_joint=posteriors.gaussian_log_joint_fn(global_cov),
            subposterior_entropies=[posteriors.GaussianSubposterior(c).entropy() for c in covs],
        )
        a = wvcmc.run_wvcmc("oma", ys, init, rng=np.random.default_rng(1), **kwargs)
        b = wvcmc.run_wvcmc("oma", ys, init, rng=np.random.default_rng(1), **kwargs)
        np.testing.assert_array_equal(a.weights.matrices, b.weights.matrices)
        np.testing.assert_array_equal(a.objective_trace, b.objective_trace)

    def test_objective_decreases_on_toy(self):
        rng = np.random.default_rng(8)
        covs, encs, n0, ys, global_cov = self._setup(rng, s=400)
        init = WeightSet("oma", np.stack([np.eye(2) / 3] * 3))
        result = wvcmc.run_wvcmc(
            "oma",
            ys,
            init,
            [e.matrix() for e in encs],
            n0,
            posteriors.gaussian_joint_grad_fn(global_cov),
            step_size=2e-3,
            n_iterations=150,
            rng=np.random.default_rng(2),
            log_joint=posteriors.gaussian_log_joint_fn(global_cov),
            subposterior_entropies=[
                posteriors.GaussianSubposterior(c).entropy() for c in covs
            ],
        )
        trace = result.objective_trace
        assert trace[-1] < trace[0]

    def test_stationarity_with_entropy_term_disabled(self):
        # Without the log-det barrier the Gaussian-toy objective is a smooth
        # quadratic, so full-batch descent reaches a first-order stationary
        # point of the data term.
        rng = np.random.default_rng(9)
        covs, encs, n0, ys, global_cov = self._setup(rng, s=500)
        grad_fn = posteriors.gaussian_joint_grad_fn(global_cov)
        weights = np.stack([np.eye(2) / 3] * 3)
        s = ys.shape[0]
        for _ in range(4000):
            thetas = apply_weights(WeightSet("oma", weights), ys)
            g = grad_fn(thetas)
            data_grad = np.stack([-(g.T @ ys[:, k, :]) / s for k in range(3)])
            weights = weights - 5e-3 * data_grad
        assert np.linalg.norm(data_grad) < 1e-3


class TestInitWeights:
    def test_toy_noma_identity_over_k(self):
        enc = channel.RepetitionEncoding(4, 1, 0.7)
        ws = wvcmc.init_weights("noma", "gaussian-toy", enc, 8)
        np.testing.assert_allclose(ws.matrices, np.eye(4) / 8)

    def test_probit_noma_scaled_pseudoinverse(self):
        enc = channel.RepetitionEncoding(3, 2, 4.0)
        ws = wvcmc.init_weights("noma", "probit-synthetic", enc, 5)
        np.testing.assert_allclose(ws.matrices, np.linalg.pinv(enc.matrix()) / 5)

    def test_oma_composes_decoders(self):
        rng = np.random.default_rng(10)
        encs = channel.oma_encodings([1.0, 2.0], 2, reps=2)
        square = WeightSet("oma", rng.standard_normal((2, 2, 2)))
        ws = wvcmc.init_weights("oma", "probit-synthetic", encs, 2, square)
        for k, enc in enumerate(encs):
            np.testing.assert_allclose(
                ws.matrices[k], square.matrices[k] @ enc.decode_matrix()
            )

    def test_oma_requires_fit(self):
        encs = channel.oma_encodings([1.0], 2, 1)
        with pytest.raises(ValueError):
            wvcmc.init_weights("oma", "gaussian-toy", encs, 1)
