import math

import numpy as np
import pytest

from collogp import kernel as kern
from collogp.equation import preset
from collogp.errors import DimensionMismatch
from collogp.linalg import cholesky
from collogp.model import (
    LOG_2PI,
    build_layout,
    build_sigma,
    data_loglik,
    init_params,
    log_joint,
    sigma_param_grads,
    virtual_loglik,
)


class TestBuildLayout:
    def test_pendulum_incomplete_counts(self):
        spec = preset("pendulum_incomplete")
        lay = build_layout(50, 20, spec)
        assert lay.size == 90

    def test_allen_cahn_counts(self):
        spec = preset("allen_cahn_complete")
        lay = build_layout(256, 100, spec)
        assert lay.size == 556

    def test_minimal(self):
        spec = preset("pendulum_incomplete")
        lay = build_layout(1, 1, spec)
        assert lay.size == 3  # train u + theta'' feature + source

    def test_offsets_disjoint_and_exhaustive(self):
        spec = preset("first_order_latent_force")
        lay = build_layout(7, 4, spec)
        covered = np.zeros(lay.size, dtype=int)
        for start, length in lay.offsets.values():
            covered[start:start + length] += 1
        assert (covered == 1).all()

    def test_no_equation(self):
        lay = build_layout(5, 0, None)
        assert lay.size == 5
        assert lay.feature_ops == []


class TestBuildSigma:
    def test_m0_reduces_to_plain_kernel(self):
        rng = np.random.default_rng(4)
        X = rng.normal(0, 2, (6, 1))
        params = init_params(None, 1)
        lay = build_layout(6, 0, None)
        S = build_sigma(lay, X, np.zeros((0, 1)), params)
        zero = kern.identity_op(1)
        K = kern.cov_block(zero, zero, X, X, params.kernel_u)
        np.testing.assert_allclose(S, K)

    def test_cross_entry_is_deriv_cov(self):
        spec = preset("pendulum_complete")
        rng = np.random.default_rng(5)
        X = rng.uniform(0, 3, (4, 1))
        C = rng.uniform(0, 3, (3, 1))
        params = init_params(spec, 1)
        lay = build_layout(4, 3, spec)
        S = build_sigma(lay, X, C, params)
        # train point 2 against the dt2 feature at collocation point 1
        start, _ = lay.offsets[("feature", 1)]
        want = kern.deriv_cov((0,), (2,), X[2], C[1], params.kernel_u)
        assert S[2, start + 1] == pytest.approx(want, rel=1e-12)

    def test_source_block_independent(self):
        spec = preset("pendulum_incomplete")
        rng = np.random.default_rng(6)
        X = rng.uniform(0, 3, (4, 1))
        C = rng.uniform(0, 3, (3, 1))
        params = init_params(spec, 1)
        lay = build_layout(4, 3, spec)
        S = build_sigma(lay, X, C, params)
        sstart, slen = lay.offsets[("source", 0)]
        np.testing.assert_allclose(S[:sstart, sstart:sstart + slen], 0.0)
        zero = kern.identity_op(1)
        np.testing.assert_allclose(
            S[sstart:sstart + slen, sstart:sstart + slen],
            kern.cov_block(zero, zero, C, C, params.kernel_u))

    def test_psd(self):
        spec = preset("pendulum_incomplete")
        rng = np.random.default_rng(7)
        X = rng.uniform(0, 7.3, (20, 1))
        C = rng.uniform(0, 28.8, (10, 1))
        params = init_params(spec, 1)
        lay = build_layout(20, 10, spec)
        S = build_sigma(lay, X, C, params)
        eigs = np.linalg.eigvalsh(S)
        assert eigs.min() >= -1e-8 * S.diagonal().max()

    def test_collocation_permutation(self):
        spec = preset("pendulum_complete")
        rng = np.random.default_rng(8)
        X = rng.uniform(0, 3, (3, 1))
        C = rng.uniform(0, 3, (5, 1))
        params = init_params(spec, 1)
        lay = build_layout(3, 5, spec)
        S = build_sigma(lay, X, C, params)
        perm = rng.permutation(5)
        S2 = build_sigma(lay, X, C[perm], params)
        # permute each collocation block of S the same way
        idx = np.concatenate([np.arange(3)] + [3 + 5 * i + perm for i in range(2)])
        np.testing.assert_allclose(S2, S[np.ix_(idx, idx)], rtol=1e-12, atol=1e-14)


class TestLogLikelihoods:
    def setup_method(self):
        self.spec = preset("pendulum_incomplete")
        self.lay = build_layout(4, 3, self.spec)
        self.params = init_params(self.spec, 1)

    def test_data_zero_residual(self):
        self.params.log_beta = 0.0
        f = np.zeros(self.lay.size)
        y = np.zeros(4)
        assert data_loglik(f, self.lay, y, self.params) == pytest.approx(4 * (-0.5 * LOG_2PI))

    def test_data_unit_residual(self):
        params = init_params(None, 1)
        params.log_beta = 0.0
        lay = build_layout(1, 0, None)
        val = data_loglik(np.zeros(1), lay, np.ones(1), params)
        assert val == pytest.approx(-0.5 * (LOG_2PI + 1.0))

    def test_data_beta_growth(self):
        f = np.zeros(self.lay.size)
        y = np.zeros(4)
        lo = data_loglik(f, self.lay, y, self.params)
        self.params.log_beta += 5.0
        hi = data_loglik(f, self.lay, y, self.params)
        assert hi > lo

    def test_data_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            data_loglik(np.zeros(self.lay.size), self.lay, np.zeros(7), self.params)

    def test_virtual_zero_residual(self):
        self.params.log_v = 0.0
        f = np.zeros(self.lay.size)
        assert virtual_loglik(f, self.lay, self.spec, self.params) == \
            pytest.approx(3 * (-0.5 * LOG_2PI))

    def test_virtual_unit_residual(self):
        lay = build_layout(1, 1, self.spec)
        params = init_params(self.spec, 1)
        params.log_v = 0.0
        f = np.zeros(lay.size)
        f[lay.offsets[("source", 0)][0]] = 1.0  # residual = theta'' + g = 1
        assert virtual_loglik(f, lay, self.spec, params) == \
            pytest.approx(-0.5 * (LOG_2PI + 1.0))

    def test_virtual_monotone_in_v(self):
        f = np.zeros(self.lay.size)
        sstart, slen = self.lay.offsets[("source", 0)]
        f[sstart:sstart + slen] = 0.5
        self.params.log_v = math.log(1.0)
        mid = virtual_loglik(f, self.lay, self.spec, self.params)
        self.params.log_v = math.log(0.01)
        tight = virtual_loglik(f, self.lay, self.spec, self.params)
        assert tight < mid  # nonzero residual punished harder at small v
        f[:] = 0.0
        self.params.log_v = math.log(1.0)
        mid0 = virtual_loglik(f, self.lay, self.spec, self.params)
        self.params.log_v = math.log(0.01)
        tight0 = virtual_loglik(f, self.lay, self.spec, self.params)
        assert tight0 > mid0


class TestLogJoint:
    def test_additivity_on_random_input(self):
        spec = preset("pendulum_complete")
        rng = np.random.default_rng(12)
        X = np.array([[0.0], [2.5], [5.0]])
        C = np.array([[1.2], [3.8]])
        params = init_params(spec, 1)
        lay = build_layout(3, 2, spec)
        S = build_sigma(lay, X, C, params)
        L, _ = cholesky(S)
        f = L @ rng.normal(0, 1, lay.size)  # draw from the prior range
        y = rng.normal(0, 1, 3)
        total = log_joint(f, y, spec, params, lay, L)
        prior = -0.5 * f @ np.linalg.solve(S + 1e-30 * np.eye(lay.size), f) \
            - 0.5 * np.linalg.slogdet(S)[1] - 0.5 * lay.size * LOG_2PI
        parts = prior + data_loglik(f, lay, y, params) \
            + virtual_loglik(f, lay, spec, params)
        assert total == pytest.approx(parts, rel=1e-8)

    def test_dense_oracle_pendulum_toy(self):
        spec = preset("pendulum_complete")
        rng = np.random.default_rng(13)
        X = np.array([[0.0], [2.5]])
        C = np.array([[1.2], [3.8]])
        params = init_params(spec, 1)
        lay = build_layout(2, 2, spec)
        S = build_sigma(lay, X, C, params)
        L, _ = cholesky(S)
        f = L @ rng.normal(0, 0.5, lay.size)
        y = rng.normal(0, 0.5, 2)
        got = log_joint(f, y, spec, params, lay, L)
        # independent dense evaluation
        u = f[:2]
        val, dt2 = f[2:4], f[4:6]
        resid = dt2 + np.sin(val)
        beta, v = params.beta, params.v
        Sj = L @ L.T
        want = (-0.5 * f @ np.linalg.inv(Sj) @ f
                - 0.5 * np.linalg.slogdet(Sj)[1] - 0.5 * 6 * LOG_2PI
                - 0.5 * beta * np.sum((y - u) ** 2) + 1.0 * math.log(beta) - 1.0 * LOG_2PI
                - 0.5 * np.sum(resid ** 2) / v - 1.0 * math.log(v) - 1.0 * LOG_2PI)
        assert got == pytest.approx(want, abs=1e-10)


def test_m0_marginal_matches_baseline_evidence():
    """Integrating the latent function out of the joint matches the exact
    GP-regression evidence when no equation is attached."""
    from collogp.baseline import GprModel, evidence

    rng = np.random.default_rng(19)
    X = rng.normal(0, 2, (8, 1))
    y = rng.normal(0, 1, 8)
    params = init_params(None, 1, s_init=0.9, amp_init=1.3, beta_init=25.0)
    lay = build_layout(8, 0, None)
    S = build_sigma(lay, X, np.zeros((0, 1)), params)
    marginal = S + np.eye(8) / params.beta
    want = (-0.5 * y @ np.linalg.solve(marginal, y)
            - 0.5 * np.linalg.slogdet(marginal)[1] - 4 * LOG_2PI)
    got = evidence(GprModel(params.kernel_u, params.log_beta, X, y))
    assert got == pytest.approx(want, abs=1e-8)


def test_sigma_param_grads_match_fd():
    spec = preset("pendulum_incomplete")
    rng = np.random.default_rng(23)
    X = rng.uniform(0, 3, (4, 1))
    C = rng.uniform(0, 3, (3, 1))
    params = init_params(spec, 1)
    lay = build_layout(4, 3, spec)
    A = rng.normal(0, 1, (lay.size, lay.size))
    Sigma_adj = 0.5 * (A + A.T)
    grads = sigma_param_grads(lay, X, C, params, Sigma_adj)
    h = 1e-6

    def value(p):
        return float(np.sum(Sigma_adj * build_sigma(lay, X, C, p)))

    for target, idx in (("log_s", 0), ("log_amp", None)):
        pp, pm = params.copy(), params.copy()
        if target == "log_s":
            pp.kernel_u.log_s[0] += h
            pm.kernel_u.log_s[0] -= h
        else:
            pp.kernel_u.log_amp += h
            pm.kernel_u.log_amp -= h
        fd = (value(pp) - value(pm)) / (2 * h)
        got = grads["u"][0][0] if target == "log_s" else grads["u"][1]
        assert got == pytest.approx(fd, rel=1e-6)


def test_coeff_values_exponentiate_positive():
    spec = preset("pendulum_complete_damped", {"b": 0.4})
    params = init_params(spec, 1)
    assert params.coeffs["b"] == pytest.approx(math.log(0.4))
    assert params.coeff_values(spec)["b"] == pytest.approx(0.4)
