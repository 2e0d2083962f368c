"""Predictive distributions from a trained posterior and evaluation metrics.

Prediction follows exact Gaussian conditioning of a query block h on the
latent vector f, with q(f) = N(A mu, A L L^T A^T) plugged in for the
posterior of f:

    mean(h) = cov(h, f) Sigma^{-1} A mu
    var(h)  = cov(h, h) - cov(h, f) B cov(f, h),   B = Sigma^{-1} - Sigma^{-1} V_f Sigma^{-1}

B is never formed explicitly; with W = A^{-1} cov(f, h) the quadratic term
is W^T W - (L^T W)^T (L^T W), which avoids squaring the condition number.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernel as kern
from . import model as mdl
from .errors import DimensionMismatch, IndexOutOfRange
from .kernel import identity_op
from .linalg import JitterPolicy, cholesky
from .model import LOG_2PI

VARIANCE_FLOOR = 1e-12


@dataclass
class GaussianPrediction:
    mean: np.ndarray
    variance: np.ndarray
    n_floored: int = 0  # how many variances were clipped up to the floor


@dataclass
class PosteriorGP:
    """Trained artifact: everything needed for Eq.-style conditioning."""

    layout: object
    train_inputs: np.ndarray
    colloc_inputs: np.ndarray
    params: object
    A: np.ndarray
    state: object
    spec: object = None

    @classmethod
    def build(cls, layout, train_inputs, colloc_inputs, params, state, policy=None, spec=None):
        train_inputs = np.atleast_2d(np.asarray(train_inputs, dtype=float))
        colloc_inputs = np.atleast_2d(np.asarray(colloc_inputs, dtype=float)) \
            if np.size(colloc_inputs) else np.zeros((0, train_inputs.shape[1]))
        Sigma = mdl.build_sigma(layout, train_inputs, colloc_inputs, params)
        A, _ = cholesky(Sigma, policy or JitterPolicy())
        return cls(layout=layout, train_inputs=train_inputs, colloc_inputs=colloc_inputs,
                   params=params, A=A, state=state, spec=spec)

    def posterior_moments(self):
        """(m_f, V_f) of q(f) = N(A mu, A L L^T A^T)."""
        m = self.A @ self.state.mu
        AL = self.A @ self.state.L
        return m, AL @ AL.T

    def _cross_cov_u(self, queries, op):
        """cov(D_op u(query), f): kernel_u derivatives against the u part,
        zeros against every source block."""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        dim = self.params.kernel_u.dim
        C = np.zeros((queries.shape[0], self.layout.size))
        for key, (b_op, Z) in zip(
                ["train"] + [("feature", i) for i in range(len(self.layout.feature_ops))],
                mdl.u_groups(self.layout, self.train_inputs, self.colloc_inputs, dim)):
            start, length = self.layout.offsets[key]
            if length:
                C[:, start:start + length] = kern.cov_block(op, b_op, queries, Z, self.params.kernel_u)
        return C

    def _cross_cov_source(self, queries, source_index):
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        dim = self.params.kernel_u.dim
        if not 0 <= source_index < self.layout.n_sources:
            raise IndexOutOfRange(f"source index {source_index} out of range "
                                  f"({self.layout.n_sources} sources)")
        C = np.zeros((queries.shape[0], self.layout.size))
        start, length = self.layout.offsets[("source", source_index)]
        zero = identity_op(dim)
        C[:, start:start + length] = kern.cov_block(
            zero, zero, queries, self.colloc_inputs, self.params.g_kernel(source_index))
        return C

    def _condition(self, C, prior_diag):
        """Marginal predictive moments given cross-covariance rows C."""
        W = scipy.linalg.solve_triangular(self.A, C.T, lower=True)  # A^{-1} cov(f, h)
        mean = W.T @ self.state.mu
        LtW = self.state.L.T @ W
        var = prior_diag - np.sum(W * W, axis=0) + np.sum(LtW * LtW, axis=0)
        n_floored = int(np.sum(var < VARIANCE_FLOOR))
        var = np.maximum(var, VARIANCE_FLOOR)
        return GaussianPrediction(mean=mean, variance=var, n_floored=n_floored)

    def predict_u(self, queries, op=None):
        """Predictive mean/variance of D_op u at each query (op defaults to
        the function value)."""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        dim = self.params.kernel_u.dim
        op = identity_op(dim) if op is None else tuple(op)
        C = self._cross_cov_u(queries, op)
        prior = np.array([kern.deriv_cov(op, op, q, q, self.params.kernel_u) for q in queries])
        return self._condition(C, prior)

    def predict_source(self, queries, source_index=0):
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        C = self._cross_cov_source(queries, source_index)
        kg = self.params.g_kernel(source_index)
        prior = np.array([kern.se_ard(q, q, kg) for q in queries])
        return self._condition(C, prior)

    def induced_kernel_rho(self, z1, z2):
        """Posterior covariance of (u(z1), u(z2)): the conditioned kernel."""
        dim = self.params.kernel_u.dim
        z1 = np.reshape(np.asarray(z1, dtype=float), (1, dim))
        z2 = np.reshape(np.asarray(z2, dtype=float), (1, dim))
        op = identity_op(dim)
        W1 = scipy.linalg.solve_triangular(self.A, self._cross_cov_u(z1, op).T, lower=True)
        W2 = scipy.linalg.solve_triangular(self.A, self._cross_cov_u(z2, op).T, lower=True)
        LtW1 = self.state.L.T @ W1
        LtW2 = self.state.L.T @ W2
        return float(kern.se_ard(z1[0], z2[0], self.params.kernel_u)
                     - W1[:, 0] @ W2[:, 0] + LtW1[:, 0] @ LtW2[:, 0])

    def cross_cov_posterior(self, z1, op1, z2, op2):
        """Posterior covariance cov(D_op1 u(z1), D_op2 u(z2)) from the same
        conditioning identity; used to check the kernel-differentiation link."""
        dim = self.params.kernel_u.dim
        z1 = np.reshape(np.asarray(z1, dtype=float), (1, dim))
        z2 = np.reshape(np.asarray(z2, dtype=float), (1, dim))
        W1 = scipy.linalg.solve_triangular(self.A, self._cross_cov_u(z1, op1).T, lower=True)
        W2 = scipy.linalg.solve_triangular(self.A, self._cross_cov_u(z2, op2).T, lower=True)
        LtW1 = self.state.L.T @ W1
        LtW2 = self.state.L.T @ W2
        return float(kern.deriv_cov(op1, op2, z1[0], z2[0], self.params.kernel_u)
                     - W1[:, 0] @ W2[:, 0] + LtW1[:, 0] @ LtW2[:, 0])


def posterior_moments(post):
    return post.posterior_moments()


def predict_u(post, queries, op=None):
    return post.predict_u(queries, op)


def predict_source(post, queries, source_index=0):
    return post.predict_source(queries, source_index)


def induced_kernel_rho(post, z1, z2):
    return post.induced_kernel_rho(z1, z2)


def rmse(pred_mean, truth):
    pred_mean = np.asarray(pred_mean, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred_mean.size != truth.size:
        raise DimensionMismatch(f"lengths differ: {pred_mean.size} vs {truth.size}")
    return float(np.sqrt(np.mean((pred_mean - truth) ** 2)))


def mnll(pred, obs_noise_var, truth):
    """Mean of -log N(truth_i | mean_i, var_i + obs_noise_var)."""
    truth = np.asarray(truth, dtype=float).ravel()
    mean = np.asarray(pred.mean, dtype=float).ravel()
    var = np.asarray(pred.variance, dtype=float).ravel() + float(obs_noise_var)
    if mean.size != truth.size:
        raise DimensionMismatch(f"lengths differ: {mean.size} vs {truth.size}")
    if obs_noise_var < 0:
        raise ValueError("obs_noise_var must be >= 0")
    return float(np.mean(0.5 * (LOG_2PI + np.log(var) + (truth - mean) ** 2 / var)))
