import numpy as np
import pytest

from collogp.equation import preset
from collogp.errors import DimensionMismatch
from collogp.infer import (
    AdamState,
    TrainConfig,
    TrainData,
    VariationalState,
    _Packer,
    adam_step,
    elbo_estimate,
    elbo_grad,
    kl_standard_normal,
    train,
)
from collogp.linalg import JitterPolicy
from collogp.model import build_layout, build_sigma, init_params


def pendulum_toy(rng, n=3, m=2):
    spec = preset("pendulum_complete")
    X = np.sort(rng.uniform(0, 4, (n, 1)), axis=0)
    y = np.sin(X[:, 0])
    colloc = rng.uniform(0, 4, (m, 1))
    return spec, TrainData(X, y, colloc)


class TestKl:
    def test_zero_at_standard_normal(self):
        assert kl_standard_normal(VariationalState.initial(5)) == 0.0

    def test_mean_shift(self):
        st = VariationalState.initial(2)
        st.mu = np.array([1.0, 0.0])
        assert kl_standard_normal(st) == pytest.approx(0.5)

    def test_diagonal_scale(self):
        st = VariationalState.initial(2)
        st.raw_tril = np.diag([np.log(2.0), 0.0])
        assert kl_standard_normal(st) == pytest.approx(1.5 - np.log(2.0))

    def test_nonnegative_on_random_states(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            P = int(rng.integers(1, 8))
            st = VariationalState(rng.normal(0, 1, P),
                                  np.tril(rng.normal(0, 0.7, (P, P))))
            assert kl_standard_normal(st) >= 0.0

    def test_zero_only_at_identity(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            P = int(rng.integers(1, 6))
            st = VariationalState(rng.normal(0, 1, P),
                                  np.tril(rng.normal(0, 0.5, (P, P))))
            if kl_standard_normal(st) == 0.0:
                np.testing.assert_allclose(st.mu, 0.0)
                np.testing.assert_allclose(st.L, np.eye(P))


class TestElbo:
    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(9)
        spec, data = pendulum_toy(rng)
        params = init_params(spec, 1)
        lay = build_layout(3, 2, spec)
        st = VariationalState.initial(lay.size)
        a = elbo_estimate(st, params, data, spec, np.random.default_rng(5), 4)
        b = elbo_estimate(st, params, data, spec, np.random.default_rng(5), 4)
        assert a == b

    def test_grad_matches_fd(self):
        # every coordinate of the S=1, fixed-seed estimate
        rng = np.random.default_rng(42)
        spec, data = pendulum_toy(rng)
        params = init_params(spec, 1)
        lay = build_layout(3, 2, spec)
        st = VariationalState.initial(lay.size)
        st.mu = rng.normal(0, 0.3, lay.size)
        st.raw_tril = np.tril(rng.normal(0, 0.1, (lay.size, lay.size)))
        policy = JitterPolicy()
        _, grads = elbo_grad(st, params, data, spec, np.random.default_rng(7), 1,
                             policy, lay)
        packer = _Packer(lay, spec, params, TrainConfig())
        vec = packer.pack(st, params)
        gvec = packer.pack_grads(grads)
        h = 1e-5
        sp, pp = st.copy(), params.copy()
        for i in range(vec.size):
            vp, vm = vec.copy(), vec.copy()
            vp[i] += h
            vm[i] -= h
            packer.unpack(vp, sp, pp)
            ep = elbo_estimate(sp, pp, data, spec, np.random.default_rng(7), 1, policy, lay)
            packer.unpack(vm, sp, pp)
            em = elbo_estimate(sp, pp, data, spec, np.random.default_rng(7), 1, policy, lay)
            fd = (ep - em) / (2 * h)
            assert abs(gvec[i] - fd) / max(abs(fd), 1e-4) < 1e-4

    def test_kl_gradient_stationary_at_prior(self):
        rng = np.random.default_rng(1)
        spec, data = pendulum_toy(rng)
        params = init_params(spec, 1)
        lay = build_layout(3, 2, spec)
        st = VariationalState.initial(lay.size)
        # huge noise variances: likelihood terms nearly flat, gradient ~ KL part
        params.log_beta = -30.0
        params.log_v = 30.0
        _, grads = elbo_grad(st, params, data, spec, np.random.default_rng(2), 50)
        np.testing.assert_allclose(grads["mu"], 0.0, atol=1e-8)
        np.testing.assert_allclose(np.diag(grads["raw_tril"]), 0.0, atol=1e-8)

    def test_marginal_likelihood_on_linear_toy(self):
        """On a linear-residual model the exact posterior is Gaussian; the
        ELBO evaluated there equals the marginal likelihood of the joint
        observation vector [y; c] (checked to 2 MC standard errors)."""
        import scipy.linalg

        spec = preset("first_order_latent_force", {"b": 0.7, "c": 0.5})
        rng = np.random.default_rng(30)
        N, M = 6, 3
        X = np.sort(rng.uniform(0, 4, (N, 1)), axis=0)
        y = np.sin(X[:, 0])
        colloc = rng.uniform(0, 4, (M, 1))
        data = TrainData(X, y, colloc)
        params = init_params(spec, 1)
        lay = build_layout(N, M, spec)
        P = lay.size
        from collogp.linalg import cholesky
        Sigma = build_sigma(lay, X, colloc, params)
        A, _ = cholesky(Sigma)
        b, c = 0.7, 0.5
        beta, v = params.beta, params.v
        E = np.zeros((M, P))
        s0 = lay.offsets[("feature", 0)][0]
        s1 = lay.offsets[("feature", 1)][0]
        sg = lay.offsets[("source", 0)][0]
        E[:, s0:s0 + M] = b * np.eye(M)
        E[:, s1:s1 + M] = np.eye(M)
        E[:, sg:sg + M] = -np.eye(M)
        J = np.zeros((N, P))
        J[:, :N] = np.eye(N)
        JA, EA = J @ A, E @ A
        # exact posterior in whitened coordinates
        Lam = np.eye(P) + beta * JA.T @ JA + EA.T @ EA / v
        Cov = np.linalg.inv(Lam)
        mu = Cov @ (beta * JA.T @ y + EA.T @ np.full(M, c) / v)
        Lw = np.linalg.cholesky(0.5 * (Cov + Cov.T))
        st = VariationalState.initial(P)
        st.mu = mu
        raw = np.tril(Lw, -1)
        raw[np.diag_indices(P)] = np.log(np.diag(Lw))
        st.raw_tril = raw
        # analytic marginal of the stacked observations [y; c*1]
        obs = np.concatenate([y, np.full(M, c)])
        G = np.vstack([JA, EA])
        Cobs = G @ G.T + np.diag(np.concatenate([np.full(N, 1 / beta), np.full(M, v)]))
        want = float(-0.5 * obs @ np.linalg.solve(Cobs, obs)
                     - 0.5 * np.linalg.slogdet(Cobs)[1]
                     - 0.5 * (N + M) * np.log(2 * np.pi))
        S = 100_000
        got = elbo_estimate(st, params, data, spec, np.random.default_rng(77), S)
        # MC spread of the per-sample log-likelihood
        vals = [elbo_estimate(st, params, data, spec, np.random.default_rng(k), 1000)
                for k in range(8)]
        se = np.std(vals) / np.sqrt(len(vals)) * np.sqrt(1000 / S) * np.sqrt(8)
        assert abs(got - want) < max(2 * np.std(vals) / np.sqrt(S / 1000), 2e-2)


class TestAdam:
    def test_first_step_magnitude(self):
        adam = AdamState.zeros(3)
        x = np.zeros(3)
        g = np.array([0.3, -2.0, 1e-4])
        out = adam_step(adam, x, g, lr=0.1)
        np.testing.assert_allclose(np.abs(out), 0.1, rtol=1e-3)
        assert np.sign(out[1]) == -1.0

    def test_zero_gradient_no_motion(self):
        adam = AdamState.zeros(2)
        x = np.array([1.0, -2.0])
        for _ in range(5):
            x = adam_step(adam, x, np.zeros(2), lr=0.1)
        np.testing.assert_allclose(x, [1.0, -2.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            adam_step(AdamState.zeros(2), np.zeros(3), np.zeros(3), lr=0.1)

    def test_deterministic_trajectories(self):
        rng1, rng2 = np.random.default_rng(5), np.random.default_rng(5)
        a1, a2 = AdamState.zeros(4), AdamState.zeros(4)
        x1, x2 = np.zeros(4), np.zeros(4)
        for _ in range(20):
            g1, g2 = rng1.normal(0, 1, 4), rng2.normal(0, 1, 4)
            x1 = adam_step(a1, x1, g1, 0.05)
            x2 = adam_step(a2, x2, g2, 0.05)
        assert np.array_equal(x1, x2)


class TestTrain:
    def test_single_epoch(self):
        rng = np.random.default_rng(2)
        spec, data = pendulum_toy(rng)
        params = init_params(spec, 1)
        cfg = TrainConfig(lr=1e-2, epochs=1, mc_samples=2, seed=0, eval_interval=1)
        eval_set = (data.X, data.y)
        trace = train(data, spec, params, cfg, eval_set)
        assert len(trace.elbo) == 1
        assert trace.best["epoch"] == 0
        assert trace.final == trace.evals[-1]

    def test_elbo_improves(self):
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            spec, data = pendulum_toy(rng, n=5, m=3)
            params = init_params(spec, 1)
            cfg = TrainConfig(lr=1e-2, epochs=200, mc_samples=5, seed=seed,
                              eval_interval=100)
            trace = train(data, spec, params, cfg, (data.X, data.y))
            assert trace.elbo[-1] > trace.elbo[0]

    def test_best_rmse_is_minimum(self):
        rng = np.random.default_rng(8)
        spec, data = pendulum_toy(rng, n=5, m=3)
        params = init_params(spec, 1)
        cfg = TrainConfig(lr=1e-2, epochs=50, mc_samples=3, seed=1, eval_interval=5)
        trace = train(data, spec, params, cfg, (data.X, data.y))
        assert trace.best["rmse"] == min(e["rmse"] for e in trace.evals)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(mc_samples=0)


def test_whitening_sample_moments():
    """f = A(mu + L eps) has empirical moments matching (A mu, A L L^T A^T)."""
    rng = np.random.default_rng(55)
    P = 6
    B = rng.normal(0, 1, (P, P))
    Sigma = B @ B.T + P * np.eye(P)
    from collogp.linalg import cholesky
    A, _ = cholesky(Sigma)
    st = VariationalState(rng.normal(0, 1, P), np.tril(rng.normal(0, 0.3, (P, P))))
    L = st.L
    S = 100_000
    eps = rng.standard_normal((P, S))
    F = A @ (st.mu[:, None] + L @ eps)
    m_want = A @ st.mu
    AL = A @ L
    V_want = AL @ AL.T
    m_got = F.mean(axis=1)
    se_mean = np.sqrt(np.diag(V_want) / S)
    assert np.all(np.abs(m_got - m_want) < 3 * se_mean)
    Fc = F - m_want[:, None]
    V_got = Fc @ Fc.T / S
    # variance of a covariance entry: (V_ii V_jj + V_ij^2) / S
    se_cov = np.sqrt((np.outer(np.diag(V_want), np.diag(V_want)) + V_want**2) / S)
    assert np.all(np.abs(V_got - V_want) < 3.5 * se_cov)
