"""Exact GP regression: closed-form evidence, its gradients, prediction,
and an Adam training loop matching the variational trainer's protocol."""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernel as kern
from .errors import DimensionMismatch, NonFinite
from .infer import AdamState, TrainTrace, adam_step
from .kernel import ArdParams, identity_op
from .linalg import JitterPolicy, cholesky
from .model import LOG_2PI
from .predict import VARIANCE_FLOOR, GaussianPrediction, mnll, rmse


@dataclass
class GprModel:
    kernel: ArdParams
    log_beta: float
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise DimensionMismatch("X rows != y length")

    @property
    def beta(self):
        return math.exp(self.log_beta)

    def copy(self):
        return GprModel(self.kernel.copy(), self.log_beta, self.X, self.y)


def _noisy_cov(m, with_grads=False):
    zero = identity_op(m.kernel.dim)
    if with_grads:
        K, dK_s, _ = kern.cov_block(zero, zero, m.X, m.X, m.kernel, with_grads=True)
        return K + np.eye(m.y.size) / m.beta, K, dK_s
    K = kern.cov_block(zero, zero, m.X, m.X, m.kernel)
    return K + np.eye(m.y.size) / m.beta


def evidence(m, policy=None):
    """log N(y | 0, K + beta^-1 I) via Cholesky."""
    C = _noisy_cov(m)
    L, _ = cholesky(C, policy or JitterPolicy())
    w = scipy.linalg.solve_triangular(L, m.y, lower=True)
    return float(-0.5 * (w @ w) - np.sum(np.log(np.diag(L))) - 0.5 * m.y.size * LOG_2PI)


def evidence_grad(m, policy=None):
    """(value, grads) with grads over log_s, log_amp, log_beta.

    Uses d evidence / d theta = 1/2 tr((alpha alpha^T - C^-1) dC/dtheta).
    """
    C, K, dK_s = _noisy_cov(m, with_grads=True)
    L, _ = cholesky(C, policy or JitterPolicy())
    n = m.y.size
    w = scipy.linalg.solve_triangular(L, m.y, lower=True)
    alpha = scipy.linalg.solve_triangular(L, w, lower=True, trans="T")
    Cinv = scipy.linalg.cho_solve((L, True), np.eye(n))
    G = np.outer(alpha, alpha) - Cinv
    val = float(-0.5 * (w @ w) - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI)
    g_log_s = 0.5 * np.tensordot(dK_s, G, axes=([1, 2], [0, 1]))
    g_log_amp = 0.5 * float(np.sum(K * G))
    g_log_beta = 0.5 * float(np.trace(G)) * (-1.0 / m.beta)
    return val, {"log_s": g_log_s, "log_amp": g_log_amp, "log_beta": g_log_beta}


def gpr_predict(m, queries, policy=None):
    """Closed-form predictive mean/variance at the query points."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    zero = identity_op(m.kernel.dim)
    C = _noisy_cov(m)
    L, _ = cholesky(C, policy or JitterPolicy())
    Kq = kern.cov_block(zero, zero, queries, m.X, m.kernel)
    W = scipy.linalg.solve_triangular(L, Kq.T, lower=True)
    wy = scipy.linalg.solve_triangular(L, m.y, lower=True)
    mean = W.T @ wy
    prior = np.full(queries.shape[0], m.kernel.amp)
    var = prior - np.sum(W * W, axis=0)
    n_floored = int(np.sum(var < VARIANCE_FLOOR))
    return GaussianPrediction(mean=mean, variance=np.maximum(var, VARIANCE_FLOOR),
                              n_floored=n_floored)


def gpr_train(m, cfg, eval_set=None):
    """Adam ascent on the evidence with the same best-RMSE tracking protocol
    as the variational trainer."""
    model = m.copy()
    d = model.kernel.dim
    vec = np.concatenate([model.kernel.log_s, [model.kernel.log_amp, model.log_beta]])
    adam = AdamState.zeros(vec.size)
    trace = TrainTrace()

    def unpack(v):
        model.kernel.log_s = v[:d].copy()
        model.kernel.log_amp = float(v[d])
        model.log_beta = float(v[d + 1])

    def evaluate(epoch):
        pred = gpr_predict(model, eval_set[0], cfg.jitter)
        r = rmse(pred.mean, eval_set[1])
        nv = 0.0 if cfg.mnll_noise_free else 1.0 / model.beta
        rec = {"epoch": epoch, "rmse": r, "mnll": mnll(pred, nv, eval_set[1])}
        trace.evals.append(rec)
        if trace.best is None or r < trace.best["rmse"]:
            trace.best = {**rec, "params": model.copy()}
        return rec

    last = None
    for epoch in range(cfg.epochs):
        try:
            val, g = evidence_grad(model, cfg.jitter)
        except NonFinite as exc:
            raise NonFinite(f"epoch {epoch}: {exc}") from exc
        trace.elbo.append(val)
        gvec = np.concatenate([g["log_s"], [g["log_amp"]],
                               [g["log_beta"] if cfg.learn_beta else 0.0]])
        if not np.isfinite(gvec).all():
            raise NonFinite(f"epoch {epoch}: non-finite evidence gradient")
        vec = adam_step(adam, vec, gvec, cfg.lr)
        unpack(vec)
        if eval_set is not None and ((epoch + 1) % cfg.eval_interval == 0
                                     or epoch == cfg.epochs - 1):
            last = evaluate(epoch)
    if eval_set is not None and last is not None:
        trace.final = last
    trace.final_params = model
    return trace
